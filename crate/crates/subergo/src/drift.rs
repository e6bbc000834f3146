//! Foster-Lyapunov drift verification and the time-space Lyapunov function.
//!
//! Three layers:
//!  - the geometric baseline `L V <= -beta V + b 1_C`,
//!  - the subgeometric drift `L V <= -phi(V) + K 1_C` with optional
//!    auto-extraction of C and K,
//!  - the explicit construction `psi(t,x) = 2 Hinv(H(V(x)) + t) - Hinv(t)`
//!    that turns a drift certificate into a time-space Lyapunov function,
//!    and the numerical re-derivation of the inequality
//!    `(d_t + L) psi <= kappa Hinv(t) 1_C - phi(Hinv(t))`.
//!
//! `kappa` plays two roles in the theory: a bound on `psi(0,.)` over C and
//! the drift coefficient. They are stored separately (`kappa_sup`,
//! `kappa_drift`); the single constant of Condition 2 is their maximum.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{Ctmc, Diffusion1d, TargetSet};
use crate::rates::RateProfile;
use crate::report::CheckReport;

/// Default pass tolerance for drift residuals (scaled by residual magnitude).
pub const DRIFT_TOL: f64 = 1e-9;

/// A candidate Lyapunov function `V >= 1`.
#[derive(Clone)]
pub enum LyapunovCandidate {
    /// Per-state values (chains).
    Tabulated(Vec<f64>),
    /// Callable (diffusions).
    Callable(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl LyapunovCandidate {
    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty Lyapunov table".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "V({i}) = {v}; Lyapunov candidates must be finite and >= 1"
                )));
            }
        }
        Ok(LyapunovCandidate::Tabulated(values))
    }

    pub fn callable(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        LyapunovCandidate::Callable(Arc::new(f))
    }

    pub fn values_for_chain(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            LyapunovCandidate::Tabulated(v) => {
                if v.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
            LyapunovCandidate::Callable(f) => {
                let vals: Vec<f64> = (0..n).map(|i| f(i as f64)).collect();
                for (i, &v) in vals.iter().enumerate() {
                    if !(v >= 1.0) || !v.is_finite() {
                        return Err(Error::Config(format!("V({i}) = {v} < 1")));
                    }
                }
                Ok(vals)
            }
        }
    }

    pub fn eval_at(&self, x: f64) -> Result<f64> {
        match self {
            LyapunovCandidate::Tabulated(_) => Err(Error::Config(
                "tabulated Lyapunov candidate cannot be evaluated at a real point".into(),
            )),
            LyapunovCandidate::Callable(f) => Ok(f(x)),
        }
    }
}

/// Outcome of a subgeometric drift check: the extracted (C, K) and the
/// per-state residuals `L V + phi(V) - K 1_C`.
#[derive(Debug, Clone)]
pub struct DriftCertificate {
    pub model_id: String,
    pub rate_id: String,
    pub target: TargetSet,
    pub k: f64,
    /// `(location, residual)`; residual <= tolerance everywhere iff passed.
    pub residuals: Vec<(String, f64)>,
    pub passed: bool,
    pub tolerance: f64,
    /// V on the chain states (empty for diffusion certificates).
    pub v_values: Vec<f64>,
}

impl DriftCertificate {
    pub fn worst_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|(_, r)| *r)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Geometric baseline: verify `(QV)(x) <= -beta V(x) + b 1_C(x)` per state.
pub fn check_geometric_drift(
    model: &Ctmc,
    v: &LyapunovCandidate,
    c: &TargetSet,
    beta: f64,
    b: f64,
) -> Result<CheckReport> {
    if !(beta > 0.0) || !(b > 0.0) {
        return Err(Error::Config(format!(
            "geometric drift needs beta, b > 0, got ({beta}, {b})"
        )));
    }
    let vals = v.values_for_chain(model.n_states())?;
    let lv = model.generator_apply(&vals)?;
    let mut report = CheckReport::new(format!("geometric_drift[{}]", model.id()));
    for x in 0..model.n_states() {
        let rhs = -beta * vals[x] + b * c.indicator_state(x);
        let tol = DRIFT_TOL * (1.0 + lv[x].abs().max(rhs.abs()));
        report.record(format!("state={x}"), lv[x], rhs, tol);
    }
    report.set_constant("beta", beta);
    report.set_constant("b", b);
    Ok(report)
}

/// Subgeometric drift `L V <= -phi(V) + K 1_C` on a chain.
///
/// With `c = None` the target set is extracted as the violating set
/// `{x : LV(x) + phi(V(x)) > 0}`; extraction fails if that set touches the
/// truncation boundary, which signals that V is not a valid candidate at
/// this truncation. With `k = None` the constant is the maximum of
/// `LV + phi(V)` over C.
pub fn check_subgeometric_drift(
    model: &Ctmc,
    v: &LyapunovCandidate,
    profile: &RateProfile,
    c: Option<&TargetSet>,
    k: Option<f64>,
) -> Result<DriftCertificate> {
    let n = model.n_states();
    let vals = v.values_for_chain(n)?;
    let lv = model.generator_apply(&vals)?;
    let phi_v: Vec<f64> = vals.iter().map(|&x| profile.phi(x)).collect::<Result<_>>()?;

    let excess: Vec<f64> = (0..n).map(|x| lv[x] + phi_v[x]).collect();

    let target = match c {
        Some(set) => set.clone(),
        None => {
            let tol_at = |x: usize| DRIFT_TOL * (1.0 + lv[x].abs().max(phi_v[x]));
            let violating: Vec<usize> = (0..n).filter(|&x| excess[x] > tol_at(x)).collect();
            if let Some(boundary) = model.truncation_boundary() {
                if violating.contains(&boundary) {
                    return Err(Error::AutoSetTouchesBoundary { state: boundary });
                }
            }
            if violating.is_empty() {
                // Drift holds with any K > 0; keep C non-empty at the
                // least-slack state so downstream constants stay defined.
                let argmax = (0..n)
                    .max_by(|&a, &b| excess[a].partial_cmp(&excess[b]).expect("finite residuals"))
                    .expect("chain has at least one state");
                TargetSet::states(vec![argmax])?
            } else {
                TargetSet::states(violating)?
            }
        }
    };

    let k = match k {
        Some(k) => k,
        None => (0..n)
            .filter(|&x| target.contains_state(x))
            .map(|x| excess[x])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE),
    };

    let mut residuals = Vec::with_capacity(n);
    let mut passed = true;
    let tolerance = DRIFT_TOL;
    for x in 0..n {
        let r = excess[x] - k * target.indicator_state(x);
        let tol = tolerance * (1.0 + lv[x].abs().max(phi_v[x]));
        if r > tol {
            passed = false;
        }
        residuals.push((format!("state={x}"), r));
    }

    Ok(DriftCertificate {
        model_id: model.id().to_string(),
        rate_id: profile.id(),
        target,
        k,
        residuals,
        passed,
        tolerance,
        v_values: vals,
    })
}

/// Subgeometric drift for a diffusion, on an evaluation grid. The generator
/// is the central finite difference; only h-interior grid points enter.
pub fn check_subgeometric_drift_diffusion(
    model: &Diffusion1d,
    v: &LyapunovCandidate,
    profile: &RateProfile,
    grid: &[f64],
    h: f64,
    c: Option<&TargetSet>,
    k: Option<f64>,
) -> Result<DriftCertificate> {
    let (lo, hi) = model.domain();
    let f = match v {
        LyapunovCandidate::Callable(f) => f.clone(),
        LyapunovCandidate::Tabulated(_) => {
            return Err(Error::Config(
                "diffusion drift checks need a callable Lyapunov candidate".into(),
            ))
        }
    };
    let interior: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&x| x - h >= lo && x + h <= hi)
        .collect();
    if interior.len() < 3 {
        return Err(Error::InsufficientData(
            "fewer than 3 h-interior grid points".into(),
        ));
    }
    let mut lv = Vec::with_capacity(interior.len());
    let mut phi_v = Vec::with_capacity(interior.len());
    for &x in &interior {
        let vx = f(x);
        if !(vx >= 1.0) {
            return Err(Error::Config(format!("V({x}) = {vx} < 1")));
        }
        lv.push(model.generator_apply(f.as_ref(), x, h)?);
        phi_v.push(profile.phi(vx)?);
    }
    let excess: Vec<f64> = lv.iter().zip(&phi_v).map(|(a, b)| a + b).collect();

    let target = match c {
        Some(set) => set.clone(),
        None => {
            let viol: Vec<usize> = (0..interior.len())
                .filter(|&i| excess[i] > DRIFT_TOL * (1.0 + lv[i].abs().max(phi_v[i])))
                .collect();
            if viol.is_empty() {
                TargetSet::interval(interior[0], interior[0])?
            } else {
                // The violating set must stay clear of the domain boundary.
                if viol.contains(&0) || viol.contains(&(interior.len() - 1)) {
                    return Err(Error::AutoSetTouchesBoundary {
                        state: *viol.last().expect("non-empty"),
                    });
                }
                TargetSet::interval(interior[viol[0]], interior[*viol.last().expect("non-empty")])?
            }
        }
    };

    let k = match k {
        Some(k) => k,
        None => (0..interior.len())
            .filter(|&i| target.contains_point(interior[i]))
            .map(|i| excess[i])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE),
    };

    let mut residuals = Vec::with_capacity(interior.len());
    let mut passed = true;
    for (i, &x) in interior.iter().enumerate() {
        let ind = if target.contains_point(x) { 1.0 } else { 0.0 };
        let r = excess[i] - k * ind;
        if r > DRIFT_TOL * (1.0 + lv[i].abs().max(phi_v[i])) {
            passed = false;
        }
        residuals.push((format!("x={x}"), r));
    }

    Ok(DriftCertificate {
        model_id: model.id().to_string(),
        rate_id: profile.id(),
        target,
        k,
        residuals,
        passed,
        tolerance: DRIFT_TOL,
        v_values: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// The time-space Lyapunov function psi
// ---------------------------------------------------------------------------

#[derive(Clone)]
enum PsiSource {
    /// `psi(t,x) = 2 Hinv(H(V(x)) + t) - Hinv(t)`.
    FromV { h_of_v: Vec<f64> },
    /// `psi(t,x) = 2 E_x[Hinv(tau + t)] - Hinv(t)` from per-state clock
    /// samples. The doubling matters: for the plain conditional moment
    /// `m(t,x) = E_x[Hinv(tau+t)]` the generator identity gives
    /// `(d_t + L) m = r 1_C (m - Hinv(t))`, which vanishes off C instead of
    /// being <= -phi(Hinv(t)); the combination `2m - Hinv` restores the
    /// drift inequality while keeping `psi >= Hinv`.
    FromHitting { tau_samples: Arc<Vec<Vec<f64>>>, r: f64 },
    /// `psi(t,x) = Hinv(t)`; useful only as a negative control.
    BareRate,
}

/// The time-space Lyapunov function of Condition 2, with its constants.
#[derive(Clone)]
pub struct PsiFunction {
    source: PsiSource,
    profile: RateProfile,
    /// `sup_{x in C} psi(0,x)` (for Monte-Carlo sources: plus 3 SE).
    pub kappa_sup: f64,
    /// Drift coefficient: `2K` for the drift construction, `r * kappa_sup`
    /// for the hitting construction.
    pub kappa_drift: f64,
    /// Condition-2 eta: `2 phi(1)` (drift route) or `phi(1)` (hitting route).
    pub eta: f64,
}

impl std::fmt::Debug for PsiFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let src = match &self.source {
            PsiSource::FromV { .. } => "FromV",
            PsiSource::FromHitting { .. } => "FromHitting",
            PsiSource::BareRate => "BareRate",
        };
        write!(
            f,
            "PsiFunction {{ source: {src}, kappa_sup: {}, kappa_drift: {}, eta: {} }}",
            self.kappa_sup, self.kappa_drift, self.eta
        )
    }
}

impl PsiFunction {
    /// The single Condition-2 constant.
    pub fn kappa(&self) -> f64 {
        self.kappa_sup.max(self.kappa_drift)
    }

    pub fn profile(&self) -> &RateProfile {
        &self.profile
    }

    /// psi(t, x) for chain state x.
    pub fn eval(&self, t: f64, x: usize) -> Result<f64> {
        match &self.source {
            PsiSource::FromV { h_of_v } => {
                Ok(2.0 * self.profile.h_inv(h_of_v[x] + t)? - self.profile.h_inv(t)?)
            }
            PsiSource::FromHitting { tau_samples, .. } => {
                let s = &tau_samples[x];
                let mut sum = 0.0;
                for &tau in s {
                    sum += self.profile.h_inv(tau + t)?;
                }
                Ok(2.0 * sum / s.len() as f64 - self.profile.h_inv(t)?)
            }
            PsiSource::BareRate => self.profile.h_inv(t),
        }
    }

    /// psi(t, x) together with its Monte-Carlo standard error (0 for
    /// deterministic sources).
    pub fn eval_with_se(&self, t: f64, x: usize) -> Result<(f64, f64)> {
        match &self.source {
            PsiSource::FromHitting { tau_samples, .. } => {
                let s = &tau_samples[x];
                let (mean, se) = mean_se_map(s, |tau| self.profile.h_inv(tau + t))?;
                Ok((2.0 * mean - self.profile.h_inv(t)?, 2.0 * se))
            }
            _ => Ok((self.eval(t, x)?, 0.0)),
        }
    }

    /// Analytic time derivative via `(Hinv)' = phi o Hinv`.
    pub fn dt_analytic(&self, t: f64, x: usize) -> Result<f64> {
        match &self.source {
            PsiSource::FromV { h_of_v } => {
                let a = self.profile.phi(self.profile.h_inv(h_of_v[x] + t)?)?;
                let b = self.profile.phi(self.profile.h_inv(t)?)?;
                Ok(2.0 * a - b)
            }
            PsiSource::FromHitting { tau_samples, .. } => {
                let s = &tau_samples[x];
                let mut sum = 0.0;
                for &tau in s {
                    sum += self.profile.phi(self.profile.h_inv(tau + t)?)?;
                }
                Ok(2.0 * sum / s.len() as f64 - self.profile.phi(self.profile.h_inv(t)?)?)
            }
            PsiSource::BareRate => self.profile.phi(self.profile.h_inv(t)?),
        }
    }

    /// Central-difference time derivative (one-sided at t = 0).
    pub fn dt_central(&self, t: f64, x: usize, dt: f64) -> Result<f64> {
        if t >= dt {
            Ok((self.eval(t + dt, x)? - self.eval(t - dt, x)?) / (2.0 * dt))
        } else {
            // second-order one-sided difference
            Ok((-3.0 * self.eval(t, x)? + 4.0 * self.eval(t + dt, x)?
                - self.eval(t + 2.0 * dt, x)?)
                / (2.0 * dt))
        }
    }

    /// Clock samples per state for Monte-Carlo sources.
    pub fn tau_samples(&self) -> Option<(&Vec<Vec<f64>>, f64)> {
        match &self.source {
            PsiSource::FromHitting { tau_samples, r } => Some((tau_samples, *r)),
            _ => None,
        }
    }

    /// psi from Monte-Carlo clock samples (built by the hitting module).
    /// `moment_sup_c` is the inflated supremum over C of the conditional
    /// moment `E_x[Hinv(tau)]`; the witness constants follow from it:
    /// `kappa_sup = 2 moment_sup_c - 1` bounds `psi(0,.)` on C and
    /// `kappa_drift = 2 r (moment_sup_c - 1)` is the drift coefficient.
    pub fn from_hitting_samples(
        profile: RateProfile,
        tau_samples: Vec<Vec<f64>>,
        r: f64,
        moment_sup_c: f64,
    ) -> Result<Self> {
        let eta = 2.0 * profile.phi(1.0)?;
        Ok(PsiFunction {
            source: PsiSource::FromHitting {
                tau_samples: Arc::new(tau_samples),
                r,
            },
            profile,
            kappa_sup: 2.0 * moment_sup_c - 1.0,
            kappa_drift: 2.0 * r * (moment_sup_c - 1.0),
            eta,
        })
    }

    /// Negative-control psi: `Hinv(t)` alone, with caller-chosen constants.
    pub fn bare_rate(profile: RateProfile, kappa: f64) -> Result<Self> {
        let eta = profile.phi(1.0)?;
        Ok(PsiFunction {
            source: PsiSource::BareRate,
            profile,
            kappa_sup: kappa,
            kappa_drift: kappa,
            eta,
        })
    }
}

fn mean_se_map(
    samples: &[f64],
    f: impl Fn(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let n = samples.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &s in samples {
        let v = f(s)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Build `psi(t,x) = 2 Hinv(H(V(x)) + t) - Hinv(t)` from a passing drift
/// certificate; the construction that proves Condition 3 implies Condition 2.
pub fn build_psi_from_v(
    v: &LyapunovCandidate,
    profile: &RateProfile,
    cert: &DriftCertificate,
) -> Result<PsiFunction> {
    if !cert.passed {
        return Err(Error::Config(
            "psi construction requires a passing drift certificate".into(),
        ));
    }
    let vals = if cert.v_values.is_empty() {
        match v {
            LyapunovCandidate::Tabulated(t) => t.clone(),
            LyapunovCandidate::Callable(_) => {
                return Err(Error::Config(
                    "chain psi construction needs tabulated V".into(),
                ))
            }
        }
    } else {
        cert.v_values.clone()
    };
    let h_of_v: Vec<f64> = vals.iter().map(|&x| profile.h(x)).collect::<Result<_>>()?;
    let psi = PsiFunction {
        source: PsiSource::FromV { h_of_v },
        profile: profile.clone(),
        kappa_sup: 0.0,
        kappa_drift: 2.0 * cert.k,
        eta: 2.0 * profile.phi(1.0)?,
    };
    // kappa_sup = sup over C of psi(0, .), via the evaluator itself.
    let mut kappa_sup = f64::NEG_INFINITY;
    for x in 0..vals.len() {
        if cert.target.contains_state(x) {
            kappa_sup = kappa_sup.max(psi.eval(0.0, x)?);
        }
    }
    if !kappa_sup.is_finite() {
        return Err(Error::Config(
            "certificate target set contains no chain state".into(),
        ));
    }
    Ok(PsiFunction {
        kappa_sup,
        ..psi
    })
}

/// Numerical verification of Condition 2 on a chain:
/// `(d_t + L) psi(t,x) <= kappa Hinv(t) 1_C(x) - phi(Hinv(t))` on the grid,
/// plus `psi >= Hinv`, `psi(0,.) <= kappa` on C, and
/// `L psi(0,.) <= kappa 1_C - eta`.
///
/// The time derivative uses the analytic identity `(Hinv)' = phi o Hinv`
/// when the profile has closed forms, central differences otherwise; for
/// Monte-Carlo psi the tolerance also carries 3 standard errors of the
/// left-hand side.
pub fn check_condition2(
    model: &Ctmc,
    psi: &PsiFunction,
    c: &TargetSet,
    t_grid: &[f64],
    dt: f64,
) -> Result<CheckReport> {
    if t_grid.is_empty() {
        return Err(Error::InsufficientData("empty t grid".into()));
    }
    let min_spacing = t_grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if t_grid.len() > 1 && dt > min_spacing / 4.0 {
        return Err(Error::Config(format!(
            "dt = {dt} too coarse for grid spacing {min_spacing}"
        )));
    }
    let kappa = psi.kappa();
    let mut report = CheckReport::new(format!("condition2[{}]", model.id()));
    report.set_constant("kappa", kappa);
    report.set_constant("kappa_sup", psi.kappa_sup);
    report.set_constant("kappa_drift", psi.kappa_drift);
    report.set_constant("eta", psi.eta);

    let slices: Vec<Result<CheckReport>> = t_grid
        .par_iter()
        .map(|&t| condition2_at(model, psi, c, t, dt))
        .collect();
    for s in slices {
        report.merge(s?);
    }

    // Boundary clauses at t = 0.
    let stats0 = PsiRowStats::compute(model, psi, 0.0)?;
    for x in 0..model.n_states() {
        if c.contains_state(x) {
            report.record(
                format!("psi(0,{x})<=kappa"),
                stats0.psi[x],
                kappa,
                1e-9 * kappa,
            );
        }
        let l_psi0 = stats0.l_psi(model, x);
        let tol = 1e-9 * (1.0 + l_psi0.abs()) + 4.0 * stats0.l_psi_se(model, x);
        report.record(
            format!("Lpsi(0,{x})<=kappa 1_C - eta"),
            l_psi0,
            kappa * c.indicator_state(x) - psi.eta,
            tol,
        );
    }
    Ok(report)
}

/// One time slice of the Condition-2 check.
fn condition2_at(
    model: &Ctmc,
    psi: &PsiFunction,
    c: &TargetSet,
    t: f64,
    dt: f64,
) -> Result<CheckReport> {
    // For the drift construction with closed forms the analytic identity
    // `(Hinv)' = phi o Hinv` removes the dt bias; for Monte-Carlo psi the
    // "analytic" derivative is exact calculus on the empirical average, so
    // it is always used there. Central differences remain for numeric
    // profiles of the drift construction.
    let use_analytic = psi.tau_samples().is_some()
        || psi.profile().method() == crate::rates::HInvMethod::ClosedForm;
    let mut report = CheckReport::new("slice");
    let h_inv_t = psi.profile().h_inv(t)?;
    let phi_rate = psi.profile().phi(h_inv_t)?;
    let stats = PsiRowStats::compute(model, psi, t)?;
    for x in 0..model.n_states() {
        // Condition-2 lower bound psi >= Hinv.
        report.record(
            format!("psi>=Hinv at (t={t},x={x})"),
            h_inv_t,
            stats.psi[x],
            1e-9 * h_inv_t,
        );
        let dpsi = if use_analytic || t < dt {
            stats.dpsi[x]
        } else {
            psi.dt_central(t, x, dt)?
        };
        let lhs = dpsi + stats.l_psi(model, x);
        let rhs = kappa_rhs(psi, c, x, h_inv_t, phi_rate);
        // Monte-Carlo psi: off C the inequality is an equality in expectation,
        // and the grid checks thousands of correlated cells per state, so the
        // noise gate is 4 standard errors (family-wise across states).
        let tol = dt * dt * lhs.abs().max(rhs.abs()).max(1.0)
            + 1e-9
            + 4.0 * stats.drift_lhs_se(model, x);
        report.record(format!("(t={t},x={x})"), lhs, rhs, tol);
    }
    Ok(report)
}

fn kappa_rhs(psi: &PsiFunction, c: &TargetSet, x: usize, h_inv_t: f64, phi_rate: f64) -> f64 {
    psi.kappa() * h_inv_t * c.indicator_state(x) - phi_rate
}

/// Per-state first and second moments of `psi(t, .)` and its analytic time
/// derivative at a fixed t. For Monte-Carlo psi the variances propagate
/// into standard errors of `(d_t + L) psi`; deterministic sources carry
/// zero variance.
struct PsiRowStats {
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    /// Var of the per-path `Hinv(tau + t)` mean, per state (0 when exact).
    var_psi: Vec<f64>,
    /// Var of the per-path `phi(Hinv(tau+t))` mean, per state.
    var_dpsi: Vec<f64>,
    /// Cov of the two per-path quantities, per state.
    cov: Vec<f64>,
}

impl PsiRowStats {
    fn compute(model: &Ctmc, psi: &PsiFunction, t: f64) -> Result<PsiRowStats> {
        let n = model.n_states();
        let profile = psi.profile();
        match psi.tau_samples() {
            Some((samples, _)) => {
                let h_inv_t = profile.h_inv(t)?;
                let phi_t = profile.phi(h_inv_t)?;
                let mut out = PsiRowStats {
                    psi: vec![0.0; n],
                    dpsi: vec![0.0; n],
                    var_psi: vec![0.0; n],
                    var_dpsi: vec![0.0; n],
                    cov: vec![0.0; n],
                };
                for x in 0..n {
                    let s = &samples[x];
                    if s.is_empty() {
                        return Err(Error::Config(format!(
                            "no clock samples tabulated at state {x}"
                        )));
                    }
                    let m = s.len() as f64;
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
                        (0.0, 0.0, 0.0, 0.0, 0.0);
                    for &tau in s {
                        // per-sample witness values 2 Hinv(tau+t) - Hinv(t)
                        // and the matching derivative samples
                        let h = profile.h_inv(tau + t)?;
                        let a = 2.0 * h - h_inv_t;
                        let b = 2.0 * profile.phi(h)? - phi_t;
                        sa += a;
                        sb += b;
                        saa += a * a;
                        sbb += b * b;
                        sab += a * b;
                    }
                    let mean_a = sa / m;
                    let mean_b = sb / m;
                    let denom = (m - 1.0).max(1.0);
                    out.psi[x] = mean_a;
                    out.dpsi[x] = mean_b;
                    out.var_psi[x] = ((saa / m - mean_a * mean_a).max(0.0) * m / denom) / m;
                    out.var_dpsi[x] = ((sbb / m - mean_b * mean_b).max(0.0) * m / denom) / m;
                    out.cov[x] = ((sab / m - mean_a * mean_b) * m / denom) / m;
                }
                Ok(out)
            }
            None => {
                let psi_row: Vec<f64> = (0..n).map(|x| psi.eval(t, x)).collect::<Result<_>>()?;
                let dpsi: Vec<f64> =
                    (0..n).map(|x| psi.dt_analytic(t, x)).collect::<Result<_>>()?;
                Ok(PsiRowStats {
                    psi: psi_row,
                    dpsi,
                    var_psi: vec![0.0; n],
                    var_dpsi: vec![0.0; n],
                    cov: vec![0.0; n],
                })
            }
        }
    }

    /// `(Q psi)(x)` from the cached row.
    fn l_psi(&self, model: &Ctmc, x: usize) -> f64 {
        (0..self.psi.len())
            .map(|y| model.rate(x, y) * self.psi[y])
            .sum()
    }

    /// SE of `(L psi)(x)`: per-state samples are independent across states.
    fn l_psi_se(&self, model: &Ctmc, x: usize) -> f64 {
        let mut var = 0.0;
        for y in 0..self.psi.len() {
            let q = model.rate(x, y);
            if q != 0.0 {
                var += q * q * self.var_psi[y];
            }
        }
        var.sqrt()
    }

    /// SE of `d_t psi(x) + (L psi)(x)`; the own-state terms share samples,
    /// so their covariance enters.
    fn drift_lhs_se(&self, model: &Ctmc, x: usize) -> f64 {
        let q_xx = model.rate(x, x);
        let mut var =
            self.var_dpsi[x] + q_xx * q_xx * self.var_psi[x] + 2.0 * q_xx * self.cov[x];
        var = var.max(0.0);
        for y in 0..self.psi.len() {
            if y == x {
                continue;
            }
            let q = model.rate(x, y);
            if q != 0.0 {
                var += q * q * self.var_psi[y];
            }
        }
        var.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{model_from_registry, Model, ModelSpec};
    use crate::rates::{RateFunction, RateProfile};

    fn two_state() -> Ctmc {
        Ctmc::new("two_state_symmetric", 2, vec![-1.0, 1.0, 1.0, -1.0]).unwrap()
    }

    fn sqrt_profile() -> RateProfile {
        RateProfile::new(RateFunction::polynomial(0.5, 1.0).unwrap())
    }

    #[test]
    fn geometric_drift_two_state_fails_off_c() {
        let c = TargetSet::states(vec![0]).unwrap();
        let v = LyapunovCandidate::tabulated(vec![1.0, 1.0]).unwrap();
        let report = check_geometric_drift(&two_state(), &v, &c, 0.5, 1.0).unwrap();
        assert!(!report.passed);
        assert!(report.violations[0].location.contains("state=1"));
    }

    #[test]
    fn geometric_drift_bd_geometric() {
        // V(n) = 2^n on bd_geometric(1, 3, 100): LV(n) = -0.5 * 2^n for n >= 1.
        let Model::Chain(chain) = model_from_registry(&ModelSpec::BdGeometric {
            lambda: 1.0,
            mu: 3.0,
            n_max: 100,
        })
        .unwrap() else {
            panic!()
        };
        let v = LyapunovCandidate::tabulated((0..=100).map(|n| 2f64.powi(n)).collect()).unwrap();
        let c = TargetSet::states(vec![0]).unwrap();
        let report = check_geometric_drift(&chain, &v, &c, 0.5, 2.0).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn psi_non_decreasing_in_t() {
        let profile = sqrt_profile();
        let chain = two_state();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert = check_subgeometric_drift(&chain, &v, &profile, None, None).unwrap();
        let psi = build_psi_from_v(&v, &profile, &cert).unwrap();
        for x in 0..2 {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=100 {
                let val = psi.eval(0.3 * k as f64, x).unwrap();
                assert!(val >= prev, "x={x} k={k}");
                prev = val;
            }
        }
    }

    #[test]
    fn geometric_drift_constant_v_everywhere_c() {
        let c = TargetSet::states(vec![0, 1]).unwrap();
        let v = LyapunovCandidate::tabulated(vec![1.0, 1.0]).unwrap();
        let report = check_geometric_drift(&two_state(), &v, &c, 1.0, 2.0).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn subgeometric_auto_extraction_two_state() {
        // V = (1,4), phi = sqrt: LV = (3,-3); state 1 satisfies -3 <= -2,
        // state 0 needs K >= 4. Auto: C = {0}, K = 4.
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert =
            check_subgeometric_drift(&two_state(), &v, &sqrt_profile(), None, None).unwrap();
        assert!(cert.passed);
        assert_eq!(cert.target, TargetSet::states(vec![0]).unwrap());
        assert!((cert.k - 4.0).abs() < 1e-12);
    }

    #[test]
    fn subgeometric_constant_v_equality() {
        let v = LyapunovCandidate::tabulated(vec![1.0, 1.0]).unwrap();
        let c = TargetSet::states(vec![0, 1]).unwrap();
        let cert = check_subgeometric_drift(&two_state(), &v, &sqrt_profile(), Some(&c), Some(1.0))
            .unwrap();
        assert!(cert.passed, "worst {}", cert.worst_residual());
    }

    #[test]
    fn auto_k_is_minimal() {
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let auto = check_subgeometric_drift(&two_state(), &v, &sqrt_profile(), None, None).unwrap();
        let lowered = check_subgeometric_drift(
            &two_state(),
            &v,
            &sqrt_profile(),
            Some(&auto.target),
            Some(auto.k - 10.0 * auto.tolerance),
        )
        .unwrap();
        assert!(!lowered.passed);
    }

    #[test]
    fn linear_v_on_bd_polynomial_touches_boundary() {
        // V(n) = n+1 gives LV(n) = -3/n, which cannot dominate phi(n+1) for
        // any power phi: the violating set runs into the truncation boundary.
        let Model::Chain(chain) =
            model_from_registry(&ModelSpec::BdPolynomial { c: 3.0, n_max: 200 }).unwrap()
        else {
            panic!()
        };
        let v =
            LyapunovCandidate::tabulated((0..=200).map(|n| (n + 1) as f64).collect()).unwrap();
        let err = check_subgeometric_drift(&chain, &v, &sqrt_profile(), None, None).unwrap_err();
        assert!(matches!(err, Error::AutoSetTouchesBoundary { state: 200 }));
    }

    #[test]
    fn power_v_on_bd_polynomial_certifies() {
        // V(n) = (n+1)^p with p = 10/3 and phi = x^0.4 gives
        // LV ~ -2.2 n^(4/3) against phi(V) ~ n^(4/3): drift holds off {0}.
        let Model::Chain(chain) =
            model_from_registry(&ModelSpec::BdPolynomial { c: 3.0, n_max: 200 }).unwrap()
        else {
            panic!()
        };
        let p = 10.0 / 3.0;
        let v = LyapunovCandidate::tabulated(
            (0..=200).map(|n| ((n + 1) as f64).powf(p)).collect(),
        )
        .unwrap();
        let profile = RateProfile::new(RateFunction::polynomial(0.4, 1.0).unwrap());
        let cert = check_subgeometric_drift(&chain, &v, &profile, None, None).unwrap();
        assert!(cert.passed);
        assert_eq!(cert.target, TargetSet::states(vec![0]).unwrap());
        // K = LV(0) + phi(1) = (2^p - 1) + 1 = 2^p
        assert!((cert.k - 2f64.powf(p)).abs() < 1e-9, "K = {}", cert.k);
    }

    #[test]
    fn certificate_soundness_independent_generator() {
        // Re-evaluate LV + phi(V) - K 1_C with a hand-coded generator.
        let v = vec![1.0, 4.0];
        let cert = check_subgeometric_drift(
            &two_state(),
            &LyapunovCandidate::tabulated(v.clone()).unwrap(),
            &sqrt_profile(),
            None,
            None,
        )
        .unwrap();
        assert!(cert.passed);
        let q = [[-1.0, 1.0], [1.0, -1.0]];
        for x in 0..2 {
            let lv: f64 = (0..2).map(|y| q[x][y] * v[y]).sum();
            let ind = if x == 0 { 1.0 } else { 0.0 };
            let residual = lv + v[x].sqrt() - cert.k * ind;
            assert!(residual <= 2.0 * cert.tolerance, "state {x}: {residual}");
            assert!((residual - cert.residuals[x].1).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_from_v_closed_forms() {
        let profile = sqrt_profile();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert = check_subgeometric_drift(&two_state(), &v, &profile, None, None).unwrap();
        let psi = build_psi_from_v(&v, &profile, &cert).unwrap();

        // psi(0,x) = 2V(x) - 1
        assert!((psi.eval(0.0, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((psi.eval(0.0, 1).unwrap() - 7.0).abs() < 1e-12);
        // V = 4, t = 2: 2 Hinv(4) - Hinv(2) = 18 - 4 = 14
        assert!((psi.eval(2.0, 1).unwrap() - 14.0).abs() < 1e-12);
        // constants: kappa_sup = psi(0,0) = 1 over C = {0}; kappa_drift = 2K = 8
        assert!((psi.kappa_sup - 1.0).abs() < 1e-12);
        assert!((psi.kappa_drift - 8.0).abs() < 1e-12);
        assert!((psi.kappa() - 8.0).abs() < 1e-12);
        assert!((psi.eta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi_requires_passing_certificate() {
        let profile = sqrt_profile();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let mut cert = check_subgeometric_drift(&two_state(), &v, &profile, None, None).unwrap();
        cert.passed = false;
        assert!(build_psi_from_v(&v, &profile, &cert).is_err());
    }

    #[test]
    fn psi0_monotone_and_concave_in_x() {
        // psi0(t, x) = Hinv(H(x) + t): non-decreasing and secant-concave in x.
        let profile = sqrt_profile();
        let xs: Vec<f64> = (0..40).map(|i| 1.0 + 0.5 * i as f64).collect();
        for &t in &[0.0, 1.0, 5.0, 20.0] {
            let vals: Vec<f64> = xs
                .iter()
                .map(|&x| profile.h_inv(profile.h(x).unwrap() + t).unwrap())
                .collect();
            for w in vals.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
            for (wx, wv) in xs.windows(3).zip(vals.windows(3)) {
                let s1 = (wv[1] - wv[0]) / (wx[1] - wx[0]);
                let s2 = (wv[2] - wv[1]) / (wx[2] - wx[1]);
                assert!(s2 <= s1 + 1e-9, "t={t}: slopes {s1} {s2}");
            }
        }
    }

    #[test]
    fn condition2_two_state_passes() {
        let profile = sqrt_profile();
        let chain = two_state();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert = check_subgeometric_drift(&chain, &v, &profile, None, None).unwrap();
        let psi = build_psi_from_v(&v, &profile, &cert).unwrap();
        let t_grid: Vec<f64> = (0..=200).map(|i| 0.1 * i as f64).collect();
        let report = check_condition2(&chain, &psi, &cert.target, &t_grid, 0.02).unwrap();
        assert!(report.passed, "{report}");
        // the t=0 equality at the in-C state is the binding point
        assert!(report.worst_margin <= 1e-9, "{}", report.worst_margin);
    }

    #[test]
    fn condition2_analytic_matches_central_difference() {
        let profile = sqrt_profile();
        let chain = two_state();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert = check_subgeometric_drift(&chain, &v, &profile, None, None).unwrap();
        let psi = build_psi_from_v(&v, &profile, &cert).unwrap();
        for &t in &[0.5, 3.0, 17.0] {
            for x in 0..2 {
                let a = psi.dt_analytic(t, x).unwrap();
                let c = psi.dt_central(t, x, 1e-3).unwrap();
                assert!((a - c).abs() <= 1e-6 * a.abs().max(1.0), "t={t} x={x}: {a} {c}");
            }
        }
    }

    #[test]
    fn condition2_bare_rate_fails_eta_clause() {
        // psi(t,x) = Hinv(t) has L psi = 0, which cannot be <= -eta.
        let profile = sqrt_profile();
        let chain = two_state();
        let psi = PsiFunction::bare_rate(profile, 1.0).unwrap();
        let report =
            check_condition2(&chain, &psi, &TargetSet::empty(), &[0.0, 1.0], 0.01).unwrap();
        assert!(!report.passed);
        assert!(report
            .violations
            .iter()
            .any(|v| v.location.contains("Lpsi(0,")));
    }

    #[test]
    fn condition2_rejects_coarse_dt() {
        let profile = sqrt_profile();
        let psi = PsiFunction::bare_rate(profile, 1.0).unwrap();
        let err = check_condition2(
            &two_state(),
            &psi,
            &TargetSet::empty(),
            &[0.0, 0.1, 0.2],
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn diffusion_drift_ou() {
        // OU: V = 1 + x^2, LV = -2x^2 + 2; phi = sqrt.
        let Model::Diffusion(d) = model_from_registry(&ModelSpec::Ou { theta: 1.0 }).unwrap()
        else {
            panic!()
        };
        let v = LyapunovCandidate::callable(|x| 1.0 + x * x);
        let grid: Vec<f64> = (-70..=70).map(|i| 0.1 * i as f64).collect();
        let cert = check_subgeometric_drift_diffusion(
            &d,
            &v,
            &sqrt_profile(),
            &grid,
            1e-4,
            None,
            None,
        )
        .unwrap();
        assert!(cert.passed, "worst {}", cert.worst_residual());
        // C is an interval around the origin, clear of the domain boundary.
        let TargetSet::Interval { lo, hi } = cert.target else {
            panic!()
        };
        assert!(lo >= -2.0 && hi <= 2.0, "C = [{lo}, {hi}]");
        assert!(cert.k > 0.0 && cert.k < 4.0);
    }
}
