//! Property-based invariants for the rate machinery and occupation clocks.

use proptest::prelude::*;

use subergo::hitting::crossing_time_on_trajectory;
use subergo::models::{TargetSet, Trajectory};
use subergo::rates::{HInvMethod, RateFunction, RateProfile};

fn poly_profile(alpha: f64) -> RateProfile {
    RateProfile::new(RateFunction::polynomial(alpha, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn h_inv_submultiplicative(
        alpha in 0.05f64..0.95,
        s in 0.0f64..60.0,
        t in 0.0f64..60.0,
    ) {
        let p = poly_profile(alpha);
        let lhs = p.h_inv(s + t).unwrap();
        let rhs = p.h_inv(s).unwrap() * p.h_inv(t).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn phi_scaling(
        alpha in 0.05f64..0.95,
        x in 1.0f64..1e6,
        kappa in 1.0f64..1e3,
    ) {
        let p = poly_profile(alpha);
        prop_assert!(p.phi(kappa * x).unwrap() <= kappa * p.phi(x).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn roundtrip_closed_form(alpha in 0.05f64..0.95, u in 1.0f64..1e6) {
        let p = poly_profile(alpha);
        let back = p.h_inv(p.h(u).unwrap()).unwrap();
        prop_assert!((back - u).abs() / u <= 1e-10);
    }

    #[test]
    fn growth_envelope(alpha in 0.05f64..0.95, t in 0.0f64..40.0) {
        // Hinv(t) <= e^t, a consequence of phi(x) <= x.
        let p = poly_profile(alpha);
        prop_assert!(p.h_inv(t).unwrap() <= t.exp() * (1.0 + 1e-9));
    }

    #[test]
    fn rate_curve_monotone(alpha in 0.05f64..0.95, t0 in 0.0f64..50.0, dt in 0.0f64..50.0) {
        let p = poly_profile(alpha);
        let curve = p.rate_curve(&[t0, t0 + dt]).unwrap();
        prop_assert!(curve[1] >= curve[0] - 1e-12);
    }

    #[test]
    fn log_smoothed_methods_agree(t in 0.0f64..200.0) {
        let ode = RateProfile::with_method(
            RateFunction::LogSmoothed, HInvMethod::OdeIntegrate, 1e-6).unwrap();
        let bis = RateProfile::with_method(
            RateFunction::LogSmoothed, HInvMethod::BisectOnQuadrature, 1e-6).unwrap();
        let a = ode.h_inv(t).unwrap();
        let b = bis.h_inv(t).unwrap();
        prop_assert!((a - b).abs() / a <= 1e-5, "t={t}: ode {a} vs bisect {b}");
    }

    #[test]
    fn occupation_clock_crossing_consistent(
        threshold in 0.01f64..2.0,
        sojourns in prop::collection::vec((0.01f64..2.0, 0usize..2), 1..30),
    ) {
        // Build an alternating-ish jump path and check the closed-form
        // crossing against the occupation accumulator: occ(cross) must be
        // exactly the threshold, and occ(t) < threshold for t < cross.
        let mut times = vec![0.0];
        let mut states = Vec::new();
        let mut t = 0.0;
        for (i, &(hold, s)) in sojourns.iter().enumerate() {
            states.push(s);
            t += hold;
            if i + 1 < sojourns.len() {
                times.push(t);
            }
        }
        let horizon = t;
        let traj = Trajectory::JumpPath { times, states, horizon };
        let target = TargetSet::states(vec![0]).unwrap();
        match crossing_time_on_trajectory(&traj, &target, threshold) {
            Some(cross) => {
                let occ = traj.occupation_in_c(&target, cross);
                prop_assert!((occ - threshold).abs() <= 1e-12);
                let before = traj.occupation_in_c(&target, cross - 1e-9);
                prop_assert!(before <= threshold);
            }
            None => {
                prop_assert!(traj.occupation_in_c(&target, horizon) < threshold + 1e-12);
            }
        }
    }
}
