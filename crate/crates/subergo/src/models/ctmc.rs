//! Finite-state continuous-time Markov chains.
//!
//! The chain is given by its Q-matrix (generator). Everything downstream is
//! exact at desk scale: `generator_apply` is the matrix action, stationary
//! distributions come from a dense LU solve of `pi Q = 0`, and transient
//! rows `P_t(x0, .) = (e^{tQ})(x0, .)` come from uniformization with a
//! Poisson series truncated at 1e-12 mass.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::rng::exp_draw;

/// Row-sum slack tolerated in a Q-matrix.
const ROW_SUM_TOL: f64 = 1e-12;
/// Cap on `uniformization_rate * t`.
pub const UNIFORMIZATION_CAP: f64 = 1e5;
/// Poisson-series mass truncation.
const UNIFORMIZATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Ctmc {
    id: String,
    n: usize,
    /// Row-major Q-matrix.
    q: Vec<f64>,
    /// Per-row non-zero off-diagonal entries `(target, rate)`.
    jumps: Vec<Vec<(usize, f64)>>,
    /// Total exit rate per state.
    exit_rate: Vec<f64>,
    /// Index of the truncation boundary state, when this chain is a finite
    /// truncation of a countable model.
    truncation_boundary: Option<usize>,
    labels: Option<Vec<String>>,
}

impl Ctmc {
    pub fn new(id: impl Into<String>, n: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: q.len(),
            });
        }
        let mut jumps = vec![Vec::new(); n];
        let mut exit_rate = vec![0.0; n];
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let v = q[i * n + j];
                if !v.is_finite() {
                    return Err(Error::Config(format!("q[{i}][{j}] = {v} is not finite")));
                }
                row_sum += v;
                if i != j {
                    if v < 0.0 {
                        return Err(Error::Config(format!(
                            "off-diagonal q[{i}][{j}] = {v} < 0"
                        )));
                    }
                    if v > 0.0 {
                        jumps[i].push((j, v));
                    }
                }
            }
            if row_sum.abs() > ROW_SUM_TOL * (1.0 + q[i * n + i].abs()) {
                return Err(Error::Config(format!(
                    "row {i} sums to {row_sum:e}, not 0"
                )));
            }
            exit_rate[i] = -q[i * n + i];
        }
        Ok(Ctmc {
            id: id.into(),
            n,
            q,
            jumps,
            exit_rate,
            truncation_boundary: None,
            labels: None,
        })
    }

    pub fn with_truncation_boundary(mut self, state: usize) -> Self {
        self.truncation_boundary = Some(state);
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn truncation_boundary(&self) -> Option<usize> {
        self.truncation_boundary
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }

    /// `(Q f)(x) = sum_y q(x,y) (f(y) - f(x))`, the exact generator action.
    pub fn generator_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: f.len(),
            });
        }
        if let Some(bad) = f.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite test-function value {bad}")));
        }
        Ok((0..self.n)
            .map(|i| {
                self.jumps[i]
                    .iter()
                    .map(|&(j, r)| r * (f[j] - f[i]))
                    .sum::<f64>()
            })
            .collect())
    }

    /// One Gillespie step from `state`: `(holding_time, next_state)`.
    /// Absorbing states return `None` (they hold forever).
    pub fn step<R: Rng>(&self, state: usize, rng: &mut R) -> Option<(f64, usize)> {
        let rate = self.exit_rate[state];
        if rate <= 0.0 {
            return None;
        }
        let hold = exp_draw(rng, rate);
        let mut u: f64 = rng.gen::<f64>() * rate;
        let row = &self.jumps[state];
        for &(j, r) in row {
            if u < r {
                return Some((hold, j));
            }
            u -= r;
        }
        // Guard against rounding at the top of the cumulative sum.
        Some((hold, row.last().expect("positive exit rate has a jump").0))
    }

    /// Event-driven sample on `[0, horizon]`, exact in distribution.
    pub fn sample_path<R: Rng>(&self, x0: usize, horizon: f64, rng: &mut R) -> Result<Trajectory> {
        if x0 >= self.n {
            return Err(Error::Config(format!("x0 = {x0} out of range")));
        }
        if !(horizon > 0.0) {
            return Err(Error::Domain {
                what: "horizon",
                value: horizon,
                expected: "> 0",
            });
        }
        let mut times = vec![0.0];
        let mut states = vec![x0];
        let mut t = 0.0;
        let mut x = x0;
        while let Some((hold, next)) = self.step(x, rng) {
            t += hold;
            if t >= horizon {
                break;
            }
            times.push(t);
            states.push(next);
            x = next;
        }
        Ok(Trajectory::JumpPath {
            times,
            states,
            horizon,
        })
    }

    /// Stationary distribution: solves `pi Q = 0`, `sum pi = 1` by dense LU.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let n = self.n;
        // Transpose Q, then replace the last equation by sum(pi) = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.q[j * n + i];
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let lu = a.lu();
        let pi = lu
            .solve(&b)
            .ok_or_else(|| Error::SingularSystem("pi Q = 0 solve failed".into()))?;
        let mut pi: Vec<f64> = pi.iter().copied().collect();
        let sum: f64 = pi.iter().sum();
        if !(sum > 0.0) || pi.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem(format!(
                "stationary solve produced mass {sum}"
            )));
        }
        for v in &mut pi {
            *v /= sum;
        }
        // Residual check; failure is reported, never silently fixed.
        let residual = self.pi_q_residual(&pi);
        if residual > 1e-10 {
            return Err(Error::SingularSystem(format!(
                "stationary residual ||pi Q||_inf = {residual:e} > 1e-10"
            )));
        }
        Ok(pi)
    }

    /// `||pi Q||_inf` for a candidate stationary vector.
    pub fn pi_q_residual(&self, pi: &[f64]) -> f64 {
        (0..self.n)
            .map(|j| {
                (0..self.n)
                    .map(|i| pi[i] * self.q[i * self.n + j])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Uniformization rate: `max_x -q(x,x)`.
    pub fn uniformization_rate(&self) -> f64 {
        self.exit_rate.iter().copied().fold(0.0, f64::max)
    }

    /// Row `x0` of `e^{tQ}` by uniformization, truncation mass <= 1e-12.
    pub fn transient_distribution(&self, x0: usize, t: f64) -> Result<Vec<f64>> {
        self.transient_distribution_capped(x0, t, UNIFORMIZATION_CAP)
    }

    pub fn transient_distribution_capped(&self, x0: usize, t: f64, cap: f64) -> Result<Vec<f64>> {
        if x0 >= self.n {
            return Err(Error::Config(format!("x0 = {x0} out of range")));
        }
        if !(t >= 0.0) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                expected: ">= 0",
            });
        }
        let n = self.n;
        let mut point = vec![0.0; n];
        point[x0] = 1.0;
        if t == 0.0 {
            return Ok(point);
        }
        let lambda = self.uniformization_rate();
        if lambda == 0.0 {
            return Ok(point);
        }
        let lt = lambda * t;
        if lt > cap {
            return Err(Error::UniformizationCap { lambda_t: lt, cap });
        }

        let weights = poisson_weights(lt, UNIFORMIZATION_EPS);
        // v = row of the skeleton kernel P = I + Q/lambda applied k times.
        let mut v = point;
        let mut next = vec![0.0; n];
        let skeleton_step = |v: &mut Vec<f64>, next: &mut Vec<f64>| {
            next.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let vi = v[i];
                if vi == 0.0 {
                    continue;
                }
                next[i] += vi * (1.0 - self.exit_rate[i] / lambda);
                for &(j, r) in &self.jumps[i] {
                    next[j] += vi * r / lambda;
                }
            }
            std::mem::swap(v, next);
        };
        for _ in 0..weights.offset {
            skeleton_step(&mut v, &mut next);
        }
        let mut out = vec![0.0; n];
        for (i, &w) in weights.terms.iter().enumerate() {
            if i > 0 {
                skeleton_step(&mut v, &mut next);
            }
            for (o, &vi) in out.iter_mut().zip(v.iter()) {
                *o += w * vi;
            }
        }
        Ok(out)
    }
}

/// Poisson(lambda_t) pmf values covering all but `eps` of the mass;
/// `terms[i]` is the pmf at `offset + i`.
struct PoissonWindow {
    terms: Vec<f64>,
    offset: usize,
}

/// Stable Poisson weights: seed the recurrence at the mode via Stirling's
/// series for ln k!, then extend in both directions until the retained mass
/// exceeds `1 - eps`.
fn poisson_weights(lt: f64, eps: f64) -> PoissonWindow {
    let mode = lt.floor().max(0.0) as usize;
    let ln_pmf_mode = mode as f64 * lt.ln() - lt - ln_factorial(mode);
    let p_mode = ln_pmf_mode.exp();

    let mut lo_terms: Vec<f64> = Vec::new(); // k = mode-1, mode-2, ...
    let mut hi_terms: Vec<f64> = vec![p_mode]; // k = mode, mode+1, ...
    let mut mass = p_mode;

    let mut k_lo = mode;
    let mut p_lo = p_mode;
    let mut k_hi = mode;
    let mut p_hi = p_mode;
    while mass < 1.0 - eps {
        // extend in the direction of the larger next term.
        let next_lo = if k_lo > 0 {
            p_lo * k_lo as f64 / lt
        } else {
            0.0
        };
        let next_hi = p_hi * lt / (k_hi + 1) as f64;
        if next_lo >= next_hi && next_lo > 0.0 {
            p_lo = next_lo;
            k_lo -= 1;
            lo_terms.push(p_lo);
            mass += p_lo;
        } else if next_hi > 0.0 {
            p_hi = next_hi;
            k_hi += 1;
            hi_terms.push(p_hi);
            mass += p_hi;
        } else {
            break;
        }
    }

    let mut terms = Vec::with_capacity(lo_terms.len() + hi_terms.len());
    terms.extend(lo_terms.iter().rev());
    terms.extend(hi_terms);
    PoissonWindow {
        terms,
        offset: k_lo,
    }
}

/// ln k! — exact product below 20, Stirling series beyond (|error| < 1e-14).
fn ln_factorial(k: usize) -> f64 {
    if k < 20 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        let x = (k + 1) as f64;
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TargetSet;
    use crate::rng::{substream, StreamRole};

    pub(crate) fn two_state() -> Ctmc {
        Ctmc::new("two_state_symmetric", 2, vec![-1.0, 1.0, 1.0, -1.0]).unwrap()
    }

    #[test]
    fn q_matrix_validation() {
        assert!(Ctmc::new("bad", 2, vec![-1.0, 0.5, 1.0, -1.0]).is_err()); // row sum != 0
        assert!(Ctmc::new("bad", 2, vec![1.0, -1.0, 1.0, -1.0]).is_err()); // negative off-diag
        assert!(Ctmc::new("bad", 2, vec![0.0; 3]).is_err()); // dimension
    }

    #[test]
    fn generator_examples() {
        let c = two_state();
        // constants are harmonic: L 1 = 0
        assert_eq!(c.generator_apply(&[3.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(c.generator_apply(&[1.0, 4.0]).unwrap(), vec![3.0, -3.0]);

        // three-state birth-death, row-by-row arithmetic oracle
        let bd = Ctmc::new(
            "bd3",
            3,
            vec![-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 2.0, -2.0],
        )
        .unwrap();
        let lf = bd.generator_apply(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(lf, vec![1.0, 0.0, -2.0]);
    }

    #[test]
    fn generator_dimension_mismatch() {
        assert!(two_state().generator_apply(&[1.0]).is_err());
    }

    #[test]
    fn absorbing_path_is_constant() {
        let c = Ctmc::new("absorbing_point", 1, vec![0.0]).unwrap();
        let mut rng = substream(1, 0, StreamRole::Path);
        let p = c.sample_path(0, 50.0, &mut rng).unwrap();
        match &p {
            Trajectory::JumpPath { times, states, .. } => {
                assert_eq!(times, &vec![0.0]);
                assert_eq!(states, &vec![0]);
            }
            _ => panic!("expected jump path"),
        }
    }

    #[test]
    fn two_state_long_run_fraction() {
        let c = two_state();
        let mut rng = substream(42, 0, StreamRole::Path);
        let p = c.sample_path(0, 1e4, &mut rng).unwrap();
        let target = TargetSet::states(vec![0]).unwrap();
        let frac = p.occupation_in_c(&target, 1e4) / 1e4;
        assert!((0.47..=0.53).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn stationary_two_state() {
        let pi = two_state().stationary_distribution().unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_birth_death_detailed_balance() {
        // q(n,n+1) = lambda, q(n,n-1) = mu on {0..N}: truncated geometric.
        let (lambda, mu, n) = (1.0, 3.0, 30usize);
        let mut q = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..=n {
            let mut diag = 0.0;
            if i < n {
                q[i * (n + 1) + i + 1] = lambda;
                diag -= lambda;
            }
            if i > 0 {
                q[i * (n + 1) + i - 1] = mu;
                diag -= mu;
            }
            q[i * (n + 1) + i] = diag;
        }
        let c = Ctmc::new("bd_geometric", n + 1, q).unwrap();
        let pi = c.stationary_distribution().unwrap();
        // detailed-balance oracle: pi(k) proportional to (lambda/mu)^k
        let rho = lambda / mu;
        let z: f64 = (0..=n).map(|k| rho.powi(k as i32)).sum();
        for k in 0..=n {
            let oracle = rho.powi(k as i32) / z;
            assert!(
                (pi[k] - oracle).abs() < 1e-12,
                "pi[{k}] = {} vs {oracle}",
                pi[k]
            );
        }
        assert!(c.pi_q_residual(&pi) <= 1e-10);
    }

    #[test]
    fn transient_at_zero_is_point_mass() {
        let d = two_state().transient_distribution(1, 0.0).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn transient_two_state_closed_form() {
        // P_t(0,.) = ((1+e^{-2t})/2, (1-e^{-2t})/2), eigendecomposition oracle
        let c = two_state();
        for &t in &[0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let d = c.transient_distribution(0, t).unwrap();
            let e = (-2.0 * t).exp();
            assert!((d[0] - 0.5 * (1.0 + e)).abs() < 1e-12, "t={t}: {d:?}");
            assert!((d[1] - 0.5 * (1.0 - e)).abs() < 1e-12);
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn transient_cap_guard() {
        let c = two_state();
        assert!(matches!(
            c.transient_distribution(0, 2e5),
            Err(Error::UniformizationCap { .. })
        ));
    }

    #[test]
    fn ln_factorial_accuracy() {
        // reference values: ln(10!) and ln(100!)
        assert!((ln_factorial(10) - 15.104412573075516).abs() < 1e-12);
        assert!((ln_factorial(100) - 363.73937555556349).abs() < 1e-10);
        assert!((ln_factorial(0) - 0.0).abs() < 1e-15);
        assert!((ln_factorial(1) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for &lt in &[0.3, 2.0, 47.0, 1.3e4] {
            let w = poisson_weights(lt, 1e-12);
            let sum: f64 = w.terms.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-11, "lt={lt}: mass {sum}");
        }
    }
}
