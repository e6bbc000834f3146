//! Randomized occupation-time hitting clocks and their moment estimators.
//!
//! The clock `tau_C^r` fires when the occupation time of C crosses `T/r`
//! with `T ~ Exp(1)` drawn independently of the path. On jump paths the
//! occupation accumulator is piecewise linear with slope 1 inside C, so the
//! crossing time is solved in closed form within a sojourn; on Euler grids
//! it is resolved to within one step.
//!
//! Paths are generated incrementally and stopped as soon as the consuming
//! estimator is satisfied, never materialized to the horizon cap. Every
//! estimator draws from counter-based substreams addressed by
//! `(master_seed xor op-salt, path_index, role)`, and aggregation is an
//! ordered reduction over path indices, so results are bitwise independent
//! of the worker count.
//!
//! Censoring: expectations in the theory run over unbounded time; paths are
//! capped at `horizon_cap`, censored mass is reported as a fraction and
//! contributes a lower bound, never silently dropped.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::drift::PsiFunction;
use crate::error::{Error, Result};
use crate::models::{Ctmc, Diffusion1d, Model, Segment, TargetSet, Trajectory};
use crate::rates::RateProfile;
use crate::report::CheckReport;
use crate::rng::{exp_draw, substream, StreamRole};

/// Censored-fraction threshold above which estimates are flagged unreliable.
pub const CENSOR_THRESHOLD: f64 = 1e-3;

/// Stream salts keeping each operation's substreams disjoint.
const SALT_HITTING: u64 = 0x68697474; // "hitt"
const SALT_TAU1: u64 = 0x74617531; // "tau1"
const SALT_IDENTITY: u64 = 0x6964656e; // "iden"
const SALT_AFUNC: u64 = 0x6166756e; // "afun"
const SALT_PSI: u64 = 0x70736968; // "psih"
const SALT_TAUDELTA: u64 = 0x74617564; // "taud"

/// Starting point of a path: chain state or diffusion position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    State(usize),
    Point(f64),
}

impl From<usize> for Start {
    fn from(s: usize) -> Self {
        Start::State(s)
    }
}

impl From<f64> for Start {
    fn from(x: f64) -> Self {
        Start::Point(x)
    }
}

/// Outcome of an occupation-clock sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockOutcome {
    /// The clock crossed at this time.
    Hit(f64),
    /// The horizon cap arrived first; the occupation reached this much.
    Censored { occupation: f64 },
}

impl ClockOutcome {
    pub fn is_censored(&self) -> bool {
        matches!(self, ClockOutcome::Censored { .. })
    }
}

/// Monte-Carlo estimate with its sampling error and censoring bookkeeping.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub censored_fraction: f64,
}

impl MomentEstimate {
    pub fn reliable(&self) -> bool {
        self.censored_fraction <= CENSOR_THRESHOLD
    }

    fn from_values(values: &[f64], censored: usize) -> Self {
        let (mean, std_error) = mean_se(values);
        MomentEstimate {
            mean,
            std_error,
            n_paths: values.len(),
            censored_fraction: censored as f64 / values.len() as f64,
        }
    }
}

/// Ordered-pass mean and standard error of the mean.
pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Incremental segment generator over a model path.
enum Walker<'a> {
    Chain {
        chain: &'a Ctmc,
        state: usize,
        t: f64,
        rng: ChaCha8Rng,
    },
    Diff {
        model: &'a Diffusion1d,
        x: f64,
        t: f64,
        rng: ChaCha8Rng,
    },
}

impl Walker<'_> {
    fn new<'a>(model: &'a Model, x0: Start, rng: ChaCha8Rng) -> Result<Walker<'a>> {
        match (model, x0) {
            (Model::Chain(chain), Start::State(s)) => {
                if s >= chain.n_states() {
                    return Err(Error::Config(format!("x0 = {s} out of range")));
                }
                Ok(Walker::Chain {
                    chain,
                    state: s,
                    t: 0.0,
                    rng,
                })
            }
            (Model::Diffusion(d), Start::Point(x)) => {
                let (lo, hi) = d.domain();
                if !(lo <= x && x <= hi) {
                    return Err(Error::Config(format!("x0 = {x} outside domain")));
                }
                Ok(Walker::Diff {
                    model: d,
                    x,
                    t: 0.0,
                    rng,
                })
            }
            _ => Err(Error::Config(
                "start point kind does not match the model kind".into(),
            )),
        }
    }

    /// Next constant piece of the path. Absorbing chain states yield one
    /// final segment with `t1 = inf`.
    fn next_segment(&mut self, target: &TargetSet) -> Segment {
        match self {
            Walker::Chain {
                chain,
                state,
                t,
                rng,
            } => {
                let in_c = target.contains_state(*state);
                match chain.step(*state, rng) {
                    Some((hold, next)) => {
                        let seg = Segment {
                            t0: *t,
                            t1: *t + hold,
                            in_c,
                        };
                        *t += hold;
                        *state = next;
                        seg
                    }
                    None => Segment {
                        t0: *t,
                        t1: f64::INFINITY,
                        in_c,
                    },
                }
            }
            Walker::Diff { model, x, t, rng } => {
                let in_c = target.contains_point(*x);
                let seg = Segment {
                    t0: *t,
                    t1: *t + model.step(),
                    in_c,
                };
                *x = model.step_from(*x, rng);
                *t += model.step();
                seg
            }
        }
    }
}

/// Sampler for the randomized hitting clock of a fixed `(model, C, r)`.
#[derive(Debug, Clone)]
pub struct HittingSampler {
    pub model: Model,
    pub target: TargetSet,
    pub r: f64,
    pub horizon_cap: f64,
    pub master_seed: u64,
}

impl HittingSampler {
    pub fn new(
        model: Model,
        target: TargetSet,
        r: f64,
        horizon_cap: f64,
        master_seed: u64,
    ) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Domain {
                what: "r",
                value: r,
                expected: "> 0",
            });
        }
        if !(horizon_cap > 0.0) {
            return Err(Error::Domain {
                what: "horizon_cap",
                value: horizon_cap,
                expected: "> 0",
            });
        }
        Ok(HittingSampler {
            model,
            target,
            r,
            horizon_cap,
            master_seed,
        })
    }

    pub fn with_r(&self, r: f64) -> Result<Self> {
        Self::new(
            self.model.clone(),
            self.target.clone(),
            r,
            self.horizon_cap,
            self.master_seed,
        )
    }

    fn walker(&self, x0: Start, salt: u64, path_index: u64) -> Result<Walker<'_>> {
        Walker::new(
            &self.model,
            x0,
            substream(self.master_seed ^ salt, path_index, StreamRole::Path),
        )
    }

    /// One draw of `tau_C^r`: first `t` with `occ_C(t) >= T/r`, `T ~ Exp(1)`.
    pub fn sample_randomized_hitting(&self, x0: Start, path_index: u64) -> Result<ClockOutcome> {
        let mut clock_rng = substream(self.master_seed ^ SALT_HITTING, path_index, StreamRole::Clock);
        let t_exp = exp_draw(&mut clock_rng, 1.0);
        let mut walker = self.walker(x0, SALT_HITTING, path_index)?;
        Ok(occupation_crossing(
            &mut walker,
            &self.target,
            t_exp / self.r,
            self.horizon_cap,
        ))
    }

    /// One draw of the deterministic-threshold clock `tau^1` of Step 1:
    /// first `t` with `occ_C(t) >= 1/(2 kappa)`. Note `r` plays no role.
    pub fn sample_tau1(&self, x0: Start, kappa: f64, path_index: u64) -> Result<ClockOutcome> {
        if !(kappa > 0.0) {
            return Err(Error::Domain {
                what: "kappa",
                value: kappa,
                expected: "> 0",
            });
        }
        let mut walker = self.walker(x0, SALT_TAU1, path_index)?;
        Ok(occupation_crossing(
            &mut walker,
            &self.target,
            0.5 / kappa,
            self.horizon_cap,
        ))
    }

    /// `tau_C(delta) = inf { t >= delta : X_t in C }`, exact on jump paths.
    pub fn first_entry_after(&self, x0: Start, delta: f64, path_index: u64) -> Result<ClockOutcome> {
        let mut walker = self.walker(x0, SALT_TAUDELTA, path_index)?;
        loop {
            let seg = walker.next_segment(&self.target);
            if seg.in_c && seg.t1 > delta {
                let entry = seg.t0.max(delta);
                if entry <= self.horizon_cap {
                    return Ok(ClockOutcome::Hit(entry));
                }
            }
            if seg.t0 > self.horizon_cap || seg.t1.is_infinite() {
                return Ok(ClockOutcome::Censored { occupation: 0.0 });
            }
        }
    }

    /// Monte-Carlo `E_x[Hinv(tau_C^r)]`. Censored paths contribute
    /// `Hinv(horizon_cap)` as a lower bound and raise the censored flag.
    pub fn estimate_hitting_moment(
        &self,
        x0: Start,
        profile: &RateProfile,
        n_paths: usize,
    ) -> Result<MomentEstimate> {
        if n_paths < 100 {
            return Err(Error::Config(format!(
                "moment estimation needs >= 100 paths, got {n_paths}"
            )));
        }
        let outcomes: Vec<Result<ClockOutcome>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| self.sample_randomized_hitting(x0, i))
            .collect();
        let mut values = Vec::with_capacity(n_paths);
        let mut censored = 0usize;
        for o in outcomes {
            match o? {
                ClockOutcome::Hit(tau) => values.push(profile.h_inv(tau)?),
                ClockOutcome::Censored { .. } => {
                    censored += 1;
                    values.push(profile.h_inv(self.horizon_cap)?);
                }
            }
        }
        Ok(MomentEstimate::from_values(&values, censored))
    }
}

/// Walk segments until the occupation accumulator crosses `threshold`.
fn occupation_crossing(
    walker: &mut Walker<'_>,
    target: &TargetSet,
    threshold: f64,
    horizon_cap: f64,
) -> ClockOutcome {
    if threshold <= 0.0 {
        return ClockOutcome::Hit(0.0);
    }
    let mut occ = 0.0;
    loop {
        let seg = walker.next_segment(target);
        if seg.in_c {
            let need = threshold - occ;
            let len = seg.t1 - seg.t0;
            if len >= need {
                let cross = seg.t0 + need;
                return if cross <= horizon_cap {
                    ClockOutcome::Hit(cross)
                } else {
                    ClockOutcome::Censored {
                        occupation: occ + (horizon_cap - seg.t0).max(0.0),
                    }
                };
            }
            occ += len;
        }
        if seg.t1 >= horizon_cap {
            return ClockOutcome::Censored { occupation: occ };
        }
        if seg.t1.is_infinite() {
            // absorbed outside C: the clock can never fire
            return ClockOutcome::Censored { occupation: occ };
        }
    }
}

/// Exact crossing time of the occupation clock on a materialized trajectory.
/// Used by tests and by the exactness oracle; mirrors `occupation_crossing`.
pub fn crossing_time_on_trajectory(
    traj: &Trajectory,
    target: &TargetSet,
    threshold: f64,
) -> Option<f64> {
    if threshold <= 0.0 {
        return Some(0.0);
    }
    let mut occ = 0.0;
    for seg in traj.segments(target) {
        if seg.in_c {
            let need = threshold - occ;
            let len = seg.t1 - seg.t0;
            if len >= need {
                return Some(seg.t0 + need);
            }
            occ += len;
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Discounted occupation integrals
// ---------------------------------------------------------------------------

/// The integrand factor `g(s)` of a discounted occupation integral,
/// together with its antiderivative when one is available in closed form
/// (it is for every bundled test function, since `G = f` itself).
struct Integrand<'a> {
    g: &'a dyn Fn(f64) -> Result<f64>,
    antideriv: Option<&'a dyn Fn(f64) -> Result<f64>>,
}

/// Per-path integral `int_0^inf exp(-r occ(s) - rho s^2) g(s) ds` on the
/// exact occupation profile.
///
/// Pieces where the occupation is frozen integrate exactly through the
/// antiderivative (when `rho = 0`); everywhere else the integrand is
/// smooth and is handled by Gauss-Legendre panels scaled to the decay
/// rates. Integration stops once the integrand falls below an absolute
/// floor; if the path reaches `s_horizon` while the integrand is still
/// above the floor, the tail is not provably negligible and the walk
/// fails with a tail-bound error carrying the integrand value there.
fn discounted_integral(
    walker: &mut Walker<'_>,
    target: &TargetSet,
    r: f64,
    rho: f64,
    integrand: &Integrand<'_>,
    s_horizon: f64,
) -> Result<f64> {
    let g = integrand.g;
    let mut occ = 0.0;
    let mut total = 0.0;
    loop {
        let seg = walker.next_segment(target);
        if seg.t0 >= s_horizon {
            let w = (-r * occ - rho * s_horizon * s_horizon).exp() * g(s_horizon)?.abs();
            if w <= stop_floor(total) {
                return Ok(total);
            }
            return Err(Error::TailBound {
                estimate: w,
                tolerance: stop_floor(total),
                horizon: s_horizon,
            });
        }
        let seg_end = seg.t1.min(s_horizon);
        if seg.in_c {
            // occupation grows at slope 1: exponential decay at rate r
            let (value, stopped) =
                in_c_piece(r, rho, g, seg.t0, seg_end, occ, stop_floor(total))?;
            total += value;
            if stopped {
                return Ok(total);
            }
            occ += seg_end - seg.t0;
        } else {
            total += frozen_piece(r, rho, integrand, seg.t0, seg_end, occ)?;
        }
        // After each piece: stop once the integrand is provably negligible.
        let w = (-r * occ - rho * seg_end * seg_end).exp() * g(seg_end)?.abs();
        if w <= stop_floor(total) {
            return Ok(total);
        }
        if seg_end >= s_horizon || seg.t1.is_infinite() {
            // Horizon reached, or absorbed outside C with no further decay.
            return Err(Error::TailBound {
                estimate: w,
                tolerance: stop_floor(total),
                horizon: seg_end,
            });
        }
    }
}

fn stop_floor(total: f64) -> f64 {
    1e-14 * total.abs().max(1e-2)
}

/// 7-point Gauss-Legendre nodes/weights on [-1, 1].
const GL7_X: [f64; 7] = [
    -0.9491079123427585,
    -0.7415311855993945,
    -0.4058451513773972,
    0.0,
    0.4058451513773972,
    0.7415311855993945,
    0.9491079123427585,
];
const GL7_W: [f64; 7] = [
    0.1294849661688697,
    0.2797053914892766,
    0.3818300505051189,
    0.4179591836734694,
    0.3818300505051189,
    0.2797053914892766,
    0.1294849661688697,
];

fn gl7(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in GL7_X.iter().zip(&GL7_W) {
        sum += w * f(mid + half * x)?;
    }
    Ok(half * sum)
}

/// Panel width resolving both the exponential decay and the Gaussian factor.
fn panel_width(r: f64, rho: f64) -> f64 {
    (2.0 / r.max(0.5)).min(1.0 / (1.0 + rho.sqrt()))
}

/// Integral over an in-C piece (occupation slope 1 from `occ0`), walking
/// Gauss-Legendre panels and stopping early once the decayed integrand is
/// below `floor`. Supports an infinite piece (absorbed inside C).
fn in_c_piece(
    r: f64,
    rho: f64,
    g: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    occ0: f64,
    floor: f64,
) -> Result<(f64, bool)> {
    let f = |s: f64| -> Result<f64> {
        Ok((-r * (occ0 + (s - a)) - rho * s * s).exp() * g(s)?)
    };
    let width = panel_width(r, rho);
    let mut lo = a;
    let mut total = 0.0;
    loop {
        if lo >= b {
            return Ok((total, false));
        }
        if f(lo)?.abs() <= floor {
            return Ok((total, true));
        }
        let hi = (lo + width).min(b);
        total += gl7(&f, lo, hi)?;
        lo = hi;
    }
}

/// Integral over an out-of-C piece: occupation frozen at `occ0`. Exact via
/// the antiderivative when `rho = 0`, Gauss-Legendre panels otherwise.
fn frozen_piece(
    r: f64,
    rho: f64,
    integrand: &Integrand<'_>,
    a: f64,
    b: f64,
    occ0: f64,
) -> Result<f64> {
    let w = (-r * occ0).exp();
    if rho == 0.0 {
        if let Some(anti) = integrand.antideriv {
            return Ok(w * (anti(b)? - anti(a)?));
        }
    }
    let g = integrand.g;
    let f = |s: f64| -> Result<f64> { Ok((-rho * s * s).exp() * g(s)?) };
    let width = panel_width(0.5, rho);
    let mut lo = a;
    let mut total = 0.0;
    while lo < b {
        let hi = (lo + width).min(b);
        total += gl7(&f, lo, hi)?;
        lo = hi;
    }
    Ok(w * total)
}

// ---------------------------------------------------------------------------
// Occupation identity (both sides on common random numbers)
// ---------------------------------------------------------------------------

/// Non-decreasing C^1 test function with f(0) = 0 for the identity
/// `E_x[f(tau_C^r)] = E_x[ int_0^inf exp(-r occ(s)) f'(s) ds ]`.
#[derive(Debug, Clone)]
pub enum TestFunction {
    /// f(s) = s
    Identity,
    /// f(s) = 1 - exp(-s)
    OneMinusExp,
    /// f(s) = Hinv(s) - 1
    HinvMinusOne(RateProfile),
    /// f = 0
    Zero,
}

impl TestFunction {
    pub fn eval(&self, s: f64) -> Result<f64> {
        match self {
            TestFunction::Identity => Ok(s),
            TestFunction::OneMinusExp => Ok(1.0 - (-s).exp()),
            TestFunction::HinvMinusOne(p) => Ok(p.h_inv(s)? - 1.0),
            TestFunction::Zero => Ok(0.0),
        }
    }

    pub fn deriv(&self, s: f64) -> Result<f64> {
        match self {
            TestFunction::Identity => Ok(1.0),
            TestFunction::OneMinusExp => Ok((-s).exp()),
            TestFunction::HinvMinusOne(p) => p.phi(p.h_inv(s)?),
            TestFunction::Zero => Ok(0.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Identity => "s".into(),
            TestFunction::OneMinusExp => "1-exp(-s)".into(),
            TestFunction::HinvMinusOne(p) => format!("Hinv-1[{}]", p.id()),
            TestFunction::Zero => "0".into(),
        }
    }
}

/// Check `E_x[f(tau)] = E_x[int exp(-r occ) f' ds]` on shared paths, with
/// the exponential clock drawn only for the left side. Passes when the gap
/// is within 3 standard errors of the per-path differences.
pub fn occupation_identity_check(
    sampler: &HittingSampler,
    x0: Start,
    f: &TestFunction,
    n_paths: usize,
) -> Result<CheckReport> {
    let per_path = |i: u64| -> Result<(f64, f64, bool)> {
        // left: clock crossing with T; right: discounted integral.
        // Both consume the same path substream, walked once each; the two
        // walks replay identical randomness.
        let mut clock_rng =
            substream(sampler.master_seed ^ SALT_IDENTITY, i, StreamRole::Clock);
        let t_exp = exp_draw(&mut clock_rng, 1.0);
        let mut w1 = sampler.walker(x0, SALT_IDENTITY, i)?;
        let left_outcome = occupation_crossing(
            &mut w1,
            &sampler.target,
            t_exp / sampler.r,
            sampler.horizon_cap,
        );
        let (left, censored) = match left_outcome {
            ClockOutcome::Hit(tau) => (f.eval(tau)?, false),
            ClockOutcome::Censored { .. } => (f.eval(sampler.horizon_cap)?, true),
        };
        let mut w2 = sampler.walker(x0, SALT_IDENTITY, i)?;
        let deriv = |s: f64| f.deriv(s);
        let anti = |s: f64| f.eval(s);
        let right = discounted_integral(
            &mut w2,
            &sampler.target,
            sampler.r,
            0.0,
            &Integrand {
                g: &deriv,
                antideriv: Some(&anti),
            },
            sampler.horizon_cap,
        )?;
        Ok((left, right, censored))
    };
    let rows: Vec<Result<(f64, f64, bool)>> =
        (0..n_paths as u64).into_par_iter().map(per_path).collect();
    let mut lefts = Vec::with_capacity(n_paths);
    let mut rights = Vec::with_capacity(n_paths);
    let mut diffs = Vec::with_capacity(n_paths);
    let mut censored = 0usize;
    for row in rows {
        let (l, r, c) = row?;
        lefts.push(l);
        rights.push(r);
        diffs.push(l - r);
        if c {
            censored += 1;
        }
    }
    let frac = censored as f64 / n_paths as f64;
    if frac > CENSOR_THRESHOLD {
        return Err(Error::Unreliable {
            censored_fraction: frac,
            threshold: CENSOR_THRESHOLD,
        });
    }
    let (left_mean, left_se) = mean_se(&lefts);
    let (right_mean, right_se) = mean_se(&rights);
    let (diff_mean, diff_se) = mean_se(&diffs);
    let mut report = CheckReport::new(format!(
        "occupation_identity[{}; f={}]",
        sampler.model.id(),
        f.name()
    ));
    report.record(
        "|E f(tau) - E integral|",
        diff_mean.abs(),
        3.0 * diff_se,
        0.0,
    );
    report.set_constant("left_mean", left_mean);
    report.set_constant("left_se", left_se);
    report.set_constant("right_mean", right_mean);
    report.set_constant("right_se", right_se);
    report.set_constant("diff_se", diff_se);
    Ok(report)
}

// ---------------------------------------------------------------------------
// psi from hitting times (Condition 1 implies Condition 2)
// ---------------------------------------------------------------------------

/// Tabulated conditional moments `m(t,x) = E_x[Hinv(tau_C + t)]` with
/// per-cell standard errors, for reporting. The Condition-2 witness built
/// from the same samples is `psi(t,x) = 2 m(t,x) - Hinv(t)`.
#[derive(Debug, Clone)]
pub struct PsiTable {
    pub states: Vec<usize>,
    pub t_grid: Vec<f64>,
    /// `mean[state_slot][t_slot]`
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub censored_fraction: Vec<f64>,
}

/// Build the hitting-time psi from clock samples at the given chain states
/// (which must cover C).
///
/// The tabulated quantity is the conditional moment `m(t,x)`; the returned
/// `PsiFunction` evaluates the witness `2 m(t,x) - Hinv(t)`, whose constants
/// derive from `sup_C m(0,.)` inflated by 3 standard errors. Construction
/// fails if any C-state is censored above threshold.
pub fn psi_via_hitting(
    sampler: &HittingSampler,
    profile: &RateProfile,
    t_grid: &[f64],
    states: &[usize],
    n_paths: usize,
) -> Result<(PsiFunction, PsiTable)> {
    let chain = sampler.model.as_chain()?;
    let n = chain.n_states();
    for &x in states {
        if x >= n {
            return Err(Error::Config(format!("state {x} out of range")));
        }
    }
    let c_states: Vec<usize> = (0..n).filter(|&x| sampler.target.contains_state(x)).collect();
    for cx in &c_states {
        if !states.contains(cx) {
            return Err(Error::Config(format!(
                "psi tabulation states must cover C; missing state {cx}"
            )));
        }
    }

    // Sample the clocks, path-parallel within each state slot.
    let mut tau_samples: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut censored_fraction = vec![0.0; states.len()];
    for (slot, &x) in states.iter().enumerate() {
        let base = slot as u64 * n_paths as u64;
        let outcomes: Vec<Result<ClockOutcome>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let idx = base + i;
                let mut clock_rng =
                    substream(sampler.master_seed ^ SALT_PSI, idx, StreamRole::Clock);
                let t_exp = exp_draw(&mut clock_rng, 1.0);
                let mut w = sampler.walker(Start::State(x), SALT_PSI, idx)?;
                Ok(occupation_crossing(
                    &mut w,
                    &sampler.target,
                    t_exp / sampler.r,
                    sampler.horizon_cap,
                ))
            })
            .collect();
        let mut taus = Vec::with_capacity(n_paths);
        let mut censored = 0usize;
        for o in outcomes {
            match o? {
                ClockOutcome::Hit(tau) => taus.push(tau),
                ClockOutcome::Censored { .. } => {
                    censored += 1;
                    taus.push(sampler.horizon_cap); // lower bound
                }
            }
        }
        censored_fraction[slot] = censored as f64 / n_paths as f64;
        if sampler.target.contains_state(x) && censored_fraction[slot] > CENSOR_THRESHOLD {
            return Err(Error::Unreliable {
                censored_fraction: censored_fraction[slot],
                threshold: CENSOR_THRESHOLD,
            });
        }
        tau_samples[x] = taus;
    }

    // Tabulate means and SEs.
    let mut mean = vec![vec![0.0; t_grid.len()]; states.len()];
    let mut se = vec![vec![0.0; t_grid.len()]; states.len()];
    for (slot, &x) in states.iter().enumerate() {
        for (k, &t) in t_grid.iter().enumerate() {
            let vals: Vec<f64> = tau_samples[x]
                .iter()
                .map(|&tau| profile.h_inv(tau + t))
                .collect::<Result<_>>()?;
            let (m, s) = mean_se(&vals);
            mean[slot][k] = m;
            se[slot][k] = s;
        }
    }

    // sup over C of the t = 0 conditional moment, inflated by 3 SE.
    let mut moment_sup_c = f64::NEG_INFINITY;
    for &x in states.iter() {
        if sampler.target.contains_state(x) {
            let vals: Vec<f64> = tau_samples[x]
                .iter()
                .map(|&tau| profile.h_inv(tau))
                .collect::<Result<_>>()?;
            let (m, s) = mean_se(&vals);
            moment_sup_c = moment_sup_c.max(m + 3.0 * s);
        }
    }
    if !moment_sup_c.is_finite() {
        return Err(Error::Config("target set contains no tabulated state".into()));
    }

    let table = PsiTable {
        states: states.to_vec(),
        t_grid: t_grid.to_vec(),
        mean,
        se,
        censored_fraction,
    };
    let psi =
        PsiFunction::from_hitting_samples(profile.clone(), tau_samples, sampler.r, moment_sup_c)?;
    Ok((psi, table))
}

// ---------------------------------------------------------------------------
// Quantitative bounds behind the moment condition: Steps 1, 3, 4
// ---------------------------------------------------------------------------

/// Step-1 bound: `E_x[Hinv(tau^1)] <= 2 psi(0,x)` for each requested state,
/// with `tau^1` the deterministic-threshold clock at `1/(2 kappa)`.
pub fn check_step1_bound(
    sampler: &HittingSampler,
    psi: &PsiFunction,
    states: &[usize],
    n_paths: usize,
) -> Result<CheckReport> {
    let kappa = psi.kappa();
    let profile = psi.profile();
    let mut report = CheckReport::new(format!("step1_bound[{}]", sampler.model.id()));
    for (slot, &x) in states.iter().enumerate() {
        let base = slot as u64 * n_paths as u64;
        let outcomes: Vec<Result<ClockOutcome>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| sampler.sample_tau1(Start::State(x), kappa, base + i))
            .collect();
        let mut vals = Vec::with_capacity(n_paths);
        let mut censored = 0usize;
        for o in outcomes {
            match o? {
                ClockOutcome::Hit(tau) => vals.push(profile.h_inv(tau)?),
                ClockOutcome::Censored { .. } => {
                    censored += 1;
                    vals.push(profile.h_inv(sampler.horizon_cap)?);
                }
            }
        }
        let est = MomentEstimate::from_values(&vals, censored);
        if !est.reliable() {
            return Err(Error::Unreliable {
                censored_fraction: est.censored_fraction,
                threshold: CENSOR_THRESHOLD,
            });
        }
        let bound = 2.0 * psi.eval(0.0, x)?;
        report.record(
            format!("state={x}"),
            est.mean,
            bound + 3.0 * est.std_error,
            0.0,
        );
        report.set_constant(format!("E_Hinv_tau1[{x}]"), est.mean);
        report.set_constant(format!("se[{x}]"), est.std_error);
    }
    report.set_constant("kappa", kappa);
    Ok(report)
}

/// The Step-2 functional
/// `A_{x,rho,r} = E_x[int_0^inf exp(-r occ(s)) (Hinv)'(s) exp(-rho s^2) ds]`,
/// integrated per path on the exact occupation profile.
pub fn estimate_a_functional(
    sampler: &HittingSampler,
    x0: Start,
    r: f64,
    rho: f64,
    profile: &RateProfile,
    n_paths: usize,
    s_horizon: f64,
) -> Result<MomentEstimate> {
    if !(r > 0.0) || rho < 0.0 {
        return Err(Error::Config(format!(
            "A functional needs r > 0 and rho >= 0, got ({r}, {rho})"
        )));
    }
    let g = |s: f64| -> Result<f64> { profile.phi(profile.h_inv(s)?) };
    let anti = |s: f64| -> Result<f64> { profile.h_inv(s) };
    let values: Vec<Result<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = sampler.walker(x0, SALT_AFUNC, i)?;
            discounted_integral(
                &mut w,
                &sampler.target,
                r,
                rho,
                &Integrand {
                    g: &g,
                    antideriv: Some(&anti),
                },
                s_horizon,
            )
        })
        .collect();
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    Ok(MomentEstimate::from_values(&values, 0))
}

/// Step-4 bound: `sup_{x in C} A_{x,0,r0} <= 4 kappa` within 3 SE.
pub fn check_step4_bound(
    sampler: &HittingSampler,
    psi: &PsiFunction,
    r0: f64,
    n_paths: usize,
    s_horizon: f64,
) -> Result<CheckReport> {
    let chain = sampler.model.as_chain()?;
    let kappa = psi.kappa();
    let mut report = CheckReport::new(format!("step4_bound[{}]", sampler.model.id()));
    for x in 0..chain.n_states() {
        if !sampler.target.contains_state(x) {
            continue;
        }
        let est = estimate_a_functional(
            sampler,
            Start::State(x),
            r0,
            0.0,
            psi.profile(),
            n_paths,
            s_horizon,
        )?;
        report.record(
            format!("A[x={x}]"),
            est.mean,
            4.0 * kappa + 3.0 * est.std_error,
            0.0,
        );
        report.set_constant(format!("A[{x}]"), est.mean);
        report.set_constant(format!("A_se[{x}]"), est.std_error);
    }
    report.set_constant("kappa", kappa);
    report.set_constant("r0", r0);
    Ok(report)
}

/// Outcome of the Step-3 calibration.
#[derive(Debug, Clone)]
pub struct CalibratedR {
    /// The sufficient rate `r0 = 2 kappa ln(4 kappa)`.
    pub r0: f64,
    /// `sup_{x in C}` of the Monte-Carlo Step-3 statistic at `r0`.
    pub step3_sup: f64,
    pub report: CheckReport,
    /// Smaller rate still passing the Step-3 gate, when tightening was on.
    pub tightened: Option<f64>,
}

/// Step-3 calibration: `r0 = 2 kappa ln(4 kappa)` makes
/// `sup_{x in C} E_x[exp(-r0/(2 kappa)) Hinv(tau^1)] <= 1/2`; the gate is
/// re-derived by Monte Carlo, and optionally bisected downward while it
/// still holds.
pub fn calibrate_r(
    sampler: &HittingSampler,
    psi: &PsiFunction,
    n_paths: usize,
    tighten: bool,
) -> Result<CalibratedR> {
    let chain = sampler.model.as_chain()?;
    let kappa = psi.kappa();
    let r0 = 2.0 * kappa * (4.0 * kappa).ln();
    let c_states: Vec<usize> = (0..chain.n_states())
        .filter(|&x| sampler.target.contains_state(x))
        .collect();
    if c_states.is_empty() {
        return Err(Error::Config("target set contains no chain state".into()));
    }

    // tau^1 samples per C-state; occ(tau^1) = 1/(2 kappa) exactly on hits.
    let mut tau1: Vec<Vec<f64>> = Vec::with_capacity(c_states.len());
    for (slot, &x) in c_states.iter().enumerate() {
        let base = slot as u64 * n_paths as u64;
        let outcomes: Vec<Result<ClockOutcome>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| sampler.sample_tau1(Start::State(x), kappa, base + i))
            .collect();
        let mut taus = Vec::with_capacity(n_paths);
        let mut censored = 0usize;
        for o in outcomes {
            match o? {
                ClockOutcome::Hit(tau) => taus.push(tau),
                ClockOutcome::Censored { .. } => {
                    censored += 1;
                    taus.push(sampler.horizon_cap);
                }
            }
        }
        let frac = censored as f64 / n_paths as f64;
        if frac > CENSOR_THRESHOLD {
            return Err(Error::Unreliable {
                censored_fraction: frac,
                threshold: CENSOR_THRESHOLD,
            });
        }
        tau1.push(taus);
    }

    let profile = psi.profile();
    let step3_sup_at = |r: f64| -> Result<(f64, f64)> {
        let discount = (-r / (2.0 * kappa)).exp();
        let mut sup = f64::NEG_INFINITY;
        let mut sup_se = 0.0;
        for taus in &tau1 {
            let vals: Vec<f64> = taus
                .iter()
                .map(|&tau| Ok(discount * profile.h_inv(tau)?))
                .collect::<Result<_>>()?;
            let (m, s) = mean_se(&vals);
            if m > sup {
                sup = m;
                sup_se = s;
            }
        }
        Ok((sup, sup_se))
    };

    let (sup0, sup0_se) = step3_sup_at(r0)?;
    let mut report = CheckReport::new(format!("step3_gate[{}]", sampler.model.id()));
    report.record("sup_C step3 at r0", sup0, 0.5 + 3.0 * sup0_se, 0.0);
    report.set_constant("kappa", kappa);
    report.set_constant("r0", r0);
    report.set_constant("step3_sup", sup0);
    report.set_constant("step3_se", sup0_se);

    let tightened = if tighten && report.passed {
        let mut lo = 0.0;
        let mut hi = r0;
        for _ in 0..24 {
            let mid = 0.5 * (lo + hi);
            let (s, se) = step3_sup_at(mid)?;
            if s <= 0.5 + 3.0 * se {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        report.set_constant("r_tightened", hi);
        Some(hi)
    } else {
        None
    };

    Ok(CalibratedR {
        r0,
        step3_sup: sup0,
        report,
        tightened,
    })
}

// ---------------------------------------------------------------------------
// The hitting-integral bound at the delayed entry time tau_C(delta)
// ---------------------------------------------------------------------------

/// Check `E_x[int_0^{tau_C(delta)} phi(Hinv(s)) ds] <= psi(0,x) +
/// kappa delta Hinv(delta)`. The integral telescopes exactly:
/// `int_0^tau phi(Hinv(s)) ds = Hinv(tau) - 1`.
pub fn check_tau_delta_bound(
    sampler: &HittingSampler,
    x0: usize,
    psi: &PsiFunction,
    delta: f64,
    n_paths: usize,
) -> Result<CheckReport> {
    if !(delta > 0.0) {
        return Err(Error::Domain {
            what: "delta",
            value: delta,
            expected: "> 0",
        });
    }
    let profile = psi.profile();
    let outcomes: Vec<Result<ClockOutcome>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| sampler.first_entry_after(Start::State(x0), delta, i))
        .collect();
    let mut vals = Vec::with_capacity(n_paths);
    let mut censored = 0usize;
    for o in outcomes {
        match o? {
            ClockOutcome::Hit(tau) => vals.push(profile.h_inv(tau)? - 1.0),
            ClockOutcome::Censored { .. } => {
                censored += 1;
                vals.push(profile.h_inv(sampler.horizon_cap)? - 1.0);
            }
        }
    }
    let est = MomentEstimate::from_values(&vals, censored);
    let kappa = psi.kappa();
    let bound = psi.eval(0.0, x0)? + kappa * delta * profile.h_inv(delta)?;
    let mut report = CheckReport::new(format!(
        "tau_delta_bound[{}; x0={x0}, delta={delta}]",
        sampler.model.id()
    ));
    report.record(
        format!("x0={x0}"),
        est.mean,
        bound + 3.0 * est.std_error,
        0.0,
    );
    if !est.reliable() {
        report.record_predicate(format!("censoring at x0={x0}"), false);
        report.note(format!(
            "censored fraction {} above threshold",
            est.censored_fraction
        ));
    }
    report.set_constant("lhs_mean", est.mean);
    report.set_constant("lhs_se", est.std_error);
    report.set_constant("bound", bound);
    report.set_constant("kappa", kappa);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{build_psi_from_v, check_subgeometric_drift, LyapunovCandidate};
    use crate::models::{model_from_registry, ModelSpec};
    use crate::rates::{RateFunction, RateProfile};

    fn absorbing_sampler(r: f64, seed: u64) -> HittingSampler {
        HittingSampler::new(
            model_from_registry(&ModelSpec::AbsorbingPoint).unwrap(),
            TargetSet::states(vec![0]).unwrap(),
            r,
            1e4,
            seed,
        )
        .unwrap()
    }

    fn two_state_sampler(r: f64, seed: u64) -> HittingSampler {
        HittingSampler::new(
            model_from_registry(&ModelSpec::TwoStateSymmetric).unwrap(),
            TargetSet::states(vec![0]).unwrap(),
            r,
            1e4,
            seed,
        )
        .unwrap()
    }

    fn sqrt_profile() -> RateProfile {
        RateProfile::new(RateFunction::polynomial(0.5, 1.0).unwrap())
    }

    fn two_state_psi(seed: u64) -> (HittingSampler, PsiFunction) {
        let sampler = two_state_sampler(1.0, seed);
        let chain = sampler.model.as_chain().unwrap();
        let profile = sqrt_profile();
        let v = LyapunovCandidate::tabulated(vec![1.0, 4.0]).unwrap();
        let cert = check_subgeometric_drift(chain, &v, &profile, None, None).unwrap();
        let psi = build_psi_from_v(&v, &profile, &cert).unwrap();
        (sampler, psi)
    }

    #[test]
    fn absorbing_clock_equals_exponential_draw() {
        // occupation(t) = t, so tau = T/r exactly; re-derive T from the
        // same substream the sampler uses.
        for &r in &[1.0, 2.0] {
            let s = absorbing_sampler(r, 11);
            for i in 0..50u64 {
                let ClockOutcome::Hit(tau) =
                    s.sample_randomized_hitting(Start::State(0), i).unwrap()
                else {
                    panic!("censored")
                };
                let mut clock = substream(11 ^ SALT_HITTING, i, StreamRole::Clock);
                let t_exp = exp_draw(&mut clock, 1.0);
                assert!((tau - t_exp / r).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_state_clock_mean_renewal_oracle() {
        // From x0 = 0 with C = {0}: each unit of occupation spawns on
        // average one unit of exile, so E[tau] = 2 E[T] = 2.
        let s = two_state_sampler(1.0, 5);
        let n = 20_000u64;
        let taus: Vec<f64> = (0..n)
            .map(|i| {
                match s.sample_randomized_hitting(Start::State(0), i).unwrap() {
                    ClockOutcome::Hit(t) => t,
                    ClockOutcome::Censored { .. } => panic!("censored"),
                }
            })
            .collect();
        let (mean, se) = mean_se(&taus);
        assert!((mean - 2.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn clock_monotone_in_r_pathwise() {
        // Same path, same T: tau is non-increasing in r, exactly.
        let chain_model = model_from_registry(&ModelSpec::TwoStateSymmetric).unwrap();
        let chain = chain_model.as_chain().unwrap();
        let target = TargetSet::states(vec![0]).unwrap();
        for i in 0..40u64 {
            let mut rng = substream(99, i, StreamRole::Path);
            let traj = chain.sample_path(0, 200.0, &mut rng).unwrap();
            let mut clock = substream(99, i, StreamRole::Clock);
            let t_exp = exp_draw(&mut clock, 1.0);
            let mut prev = f64::INFINITY;
            for &r in &[0.5, 1.0, 2.0, 4.0, 8.0] {
                let tau = crossing_time_on_trajectory(&traj, &target, t_exp / r)
                    .expect("long horizon");
                assert!(tau <= prev);
                prev = tau;
            }
        }
    }

    #[test]
    fn crossing_matches_fine_grid_scan() {
        // Brute-force oracle: scan the occupation accumulator on a 1e-6 grid.
        let chain_model = model_from_registry(&ModelSpec::TwoStateSymmetric).unwrap();
        let chain = chain_model.as_chain().unwrap();
        let target = TargetSet::states(vec![0]).unwrap();
        for i in 0..100u64 {
            let mut rng = substream(7, i, StreamRole::Path);
            let traj = chain.sample_path(0, 4.0, &mut rng).unwrap();
            let threshold = 0.3 + 0.01 * i as f64 / 10.0;
            let exact = crossing_time_on_trajectory(&traj, &target, threshold);
            // incremental scan
            let step = 1e-6;
            let mut occ = 0.0;
            let mut scan = None;
            let segs: Vec<_> = traj.segments(&target).collect();
            let mut seg_idx = 0;
            let mut t = 0.0;
            while t <= 4.0 {
                while seg_idx < segs.len() && segs[seg_idx].t1 <= t {
                    seg_idx += 1;
                }
                if seg_idx < segs.len() && segs[seg_idx].in_c && segs[seg_idx].t0 <= t {
                    occ += step;
                }
                if occ >= threshold {
                    scan = Some(t);
                    break;
                }
                t += step;
            }
            match (exact, scan) {
                (Some(e), Some(s)) => assert!((e - s).abs() <= 2e-6, "path {i}: {e} vs {s}"),
                (None, None) => {}
                (e, s) => panic!("path {i}: exact {e:?} vs scan {s:?}"),
            }
        }
    }

    #[test]
    fn moment_absorbing_closed_form() {
        // E[(1 + T/2)^2] = 1 + E[T] + E[T^2]/4 = 2.5 for T ~ Exp(1).
        let s = absorbing_sampler(1.0, 3);
        let est = s
            .estimate_hitting_moment(Start::State(0), &sqrt_profile(), 20_000)
            .unwrap();
        assert!(est.reliable());
        assert!(
            (est.mean - 2.5).abs() <= 3.0 * est.std_error,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn moment_large_r_tends_to_one() {
        let s = absorbing_sampler(1e9, 3);
        let est = s
            .estimate_hitting_moment(Start::State(0), &sqrt_profile(), 200)
            .unwrap();
        assert!((est.mean - 1.0).abs() < 1e-6, "mean {}", est.mean);
    }

    #[test]
    fn moment_requires_enough_paths() {
        let s = absorbing_sampler(1.0, 3);
        assert!(s
            .estimate_hitting_moment(Start::State(0), &sqrt_profile(), 99)
            .is_err());
    }

    #[test]
    fn identity_absorbing_f_identity() {
        // tau = T and integral of e^{-s} ds = 1: both sides estimate 1.
        let s = absorbing_sampler(1.0, 13);
        let report =
            occupation_identity_check(&s, Start::State(0), &TestFunction::Identity, 4000)
                .unwrap();
        assert!(report.passed, "{report}");
        assert!((report.constants["left_mean"] - 1.0).abs() < 0.05);
        assert!((report.constants["right_mean"] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_zero_function() {
        let s = two_state_sampler(1.0, 17);
        let report =
            occupation_identity_check(&s, Start::State(1), &TestFunction::Zero, 500).unwrap();
        assert!(report.passed);
        assert_eq!(report.constants["left_mean"], 0.0);
        assert_eq!(report.constants["right_mean"], 0.0);
    }

    #[test]
    fn identity_two_state_hinv() {
        let s = two_state_sampler(1.0, 19);
        let f = TestFunction::HinvMinusOne(sqrt_profile());
        let report = occupation_identity_check(&s, Start::State(0), &f, 20_000).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn tau1_absorbing_thresholds() {
        let s = absorbing_sampler(1.0, 23);
        let ClockOutcome::Hit(t1) = s.sample_tau1(Start::State(0), 1.0, 0).unwrap() else {
            panic!()
        };
        assert_eq!(t1, 0.5);
        let ClockOutcome::Hit(t2) = s.sample_tau1(Start::State(0), 4.0, 0).unwrap() else {
            panic!()
        };
        assert_eq!(t2, 0.125);
    }

    #[test]
    fn tau1_dominates_first_entry() {
        // From x0 = 1 outside C the clock only starts accruing after entry.
        let s = two_state_sampler(1.0, 29);
        for i in 0..200u64 {
            let ClockOutcome::Hit(tau1) = s.sample_tau1(Start::State(1), 1.0, i).unwrap() else {
                panic!()
            };
            // Re-walk the same substream to find the first entry into C.
            let mut w = s.walker(Start::State(1), SALT_TAU1, i).unwrap();
            let entry = loop {
                let seg = w.next_segment(&s.target);
                if seg.in_c {
                    break seg.t0;
                }
            };
            assert!(tau1 >= entry, "path {i}: {tau1} < {entry}");
        }
    }

    #[test]
    fn psi_via_hitting_absorbing() {
        let s = absorbing_sampler(1.0, 31);
        let profile = sqrt_profile();
        let t_grid = vec![0.0, 1.0, 2.0];
        let (psi, table) = psi_via_hitting(&s, &profile, &t_grid, &[0], 20_000).unwrap();
        // conditional moment m(0,0) = E[(1+T/2)^2] = 2.5
        let m = table.mean[0][0];
        let se = table.se[0][0];
        assert!((m - 2.5).abs() <= 3.0 * se, "{m} +- {se}");
        // witness psi(0,0) = 2 m - 1 and its constants
        assert!((psi.eval(0.0, 0).unwrap() - (2.0 * m - 1.0)).abs() < 1e-12);
        assert!(psi.kappa_sup >= 2.0 * m - 1.0);
        assert!((psi.eta - 2.0).abs() < 1e-12);
        // r = 1: kappa_sup = 2 m_hat - 1 exceeds kappa_drift = 2 (m_hat - 1) by 1
        assert!((psi.kappa_sup - psi.kappa_drift - 1.0).abs() < 1e-12);

        // cellwise invariants: psi >= Hinv and the submultiplicative envelope
        for (k, &t) in t_grid.iter().enumerate() {
            let h = profile.h_inv(t).unwrap();
            assert!(table.mean[0][k] >= h);
            assert!(table.mean[0][k] <= h * table.mean[0][0] + 3.0 * table.se[0][k]);
        }
    }

    #[test]
    fn psi_via_hitting_requires_covering_c() {
        let s = two_state_sampler(1.0, 37);
        let err = psi_via_hitting(&s, &sqrt_profile(), &[0.0], &[1], 200).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn step1_bound_two_state() {
        let (sampler, psi) = two_state_psi(41);
        let report = check_step1_bound(&sampler, &psi, &[0, 1], 5000).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn step1_bound_absorbing_deterministic() {
        // tau^1 = 1/(2 kappa) deterministic; bound reads
        // Hinv(1/(2 kappa)) <= 2 psi(0, x).
        let s = absorbing_sampler(1.0, 43);
        let profile = sqrt_profile();
        let (psi, _) = psi_via_hitting(&s, &profile, &[0.0], &[0], 2000).unwrap();
        let report = check_step1_bound(&s, &psi, &[0], 500).unwrap();
        assert!(report.passed, "{report}");
        let kappa = psi.kappa();
        let expect = profile.h_inv(0.5 / kappa).unwrap();
        assert!((report.constants["E_Hinv_tau1[0]"] - expect).abs() < 1e-12);
        assert!(expect <= 2.0 * psi.eval(0.0, 0).unwrap());
    }

    #[test]
    fn a_functional_absorbing_closed_form() {
        // occupation = s: A = int_0^inf e^{-s} (1 + s/2) ds = 1.5, deterministic.
        let s = absorbing_sampler(1.0, 47);
        let est = estimate_a_functional(
            &s,
            Start::State(0),
            1.0,
            0.0,
            &sqrt_profile(),
            200,
            1e4,
        )
        .unwrap();
        assert!((est.mean - 1.5).abs() < 1e-8, "A = {}", est.mean);
        assert!(est.std_error < 1e-12);
    }

    #[test]
    fn a_functional_laplace_limit() {
        // rho huge: A ~ phi(1) sqrt(pi/rho)/2.
        let s = absorbing_sampler(0.01, 53);
        let rho = 1e6;
        let est = estimate_a_functional(
            &s,
            Start::State(0),
            0.01,
            rho,
            &sqrt_profile(),
            50,
            1e4,
        )
        .unwrap();
        let oracle = 0.5 * (std::f64::consts::PI / rho).sqrt();
        assert!(
            (est.mean - oracle).abs() / oracle < 1e-2,
            "A = {} vs {oracle}",
            est.mean
        );
    }

    #[test]
    fn calibrate_r_formula_and_gate() {
        let (sampler, psi) = two_state_psi(59);
        let kappa = psi.kappa(); // 8 for this certificate
        let cal = calibrate_r(&sampler, &psi, 5000, true).unwrap();
        assert!((cal.r0 - 2.0 * kappa * (4.0 * kappa).ln()).abs() < 1e-12);
        assert!(cal.report.passed, "{}", cal.report);
        assert!(cal.step3_sup <= 0.5 + 1e-6);
        let tightened = cal.tightened.unwrap();
        assert!(tightened > 0.0 && tightened < cal.r0);
    }

    #[test]
    fn calibrate_r_closed_form_values() {
        // kappa = 1 gives r0 = 2 ln 4; kappa = 4 gives r0 = 8 ln 16. The
        // Monte-Carlo gate is checked on the absorbing model, where
        // tau^1 = 1/(2 kappa) is deterministic and the statistic is
        // exp(-r0/(2 kappa)) Hinv(1/(2 kappa)) <= 1/2 by direct evaluation.
        let sampler = absorbing_sampler(1.0, 83);
        for (kappa, expect) in [(1.0, 2.0 * 4.0f64.ln()), (4.0, 8.0 * 16.0f64.ln())] {
            let psi = PsiFunction::bare_rate(sqrt_profile(), kappa).unwrap();
            let cal = calibrate_r(&sampler, &psi, 300, false).unwrap();
            assert!((cal.r0 - expect).abs() < 1e-12, "kappa={kappa}: {}", cal.r0);
            assert!(cal.report.passed, "kappa={kappa}: {}", cal.report);
            let oracle = (-cal.r0 / (2.0 * kappa)).exp()
                * sqrt_profile().h_inv(0.5 / kappa).unwrap();
            assert!((cal.step3_sup - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn step4_bound_two_state() {
        let (sampler, psi) = two_state_psi(61);
        let cal = calibrate_r(&sampler, &psi, 3000, false).unwrap();
        let report = check_step4_bound(&sampler, &psi, cal.r0, 3000, 1e4).unwrap();
        assert!(report.passed, "{report}");
        // r0 is large, so A is far below 4 kappa
        assert!(report.constants["A[0]"] < psi.kappa());
    }

    #[test]
    fn tau_delta_absorbing_deterministic() {
        // x0 in C, chain absorbing: tau_C(1) = 1, lhs = Hinv(1) - 1 = 1.25.
        let s = absorbing_sampler(1.0, 67);
        let profile = sqrt_profile();
        let (psi, _) = psi_via_hitting(&s, &profile, &[0.0], &[0], 2000).unwrap();
        let report = check_tau_delta_bound(&s, 0, &psi, 1.0, 300).unwrap();
        assert!(report.passed, "{report}");
        assert!((report.constants["lhs_mean"] - 1.25).abs() < 1e-12);

        // delta -> 0+ started in C: the integral vanishes, bound -> psi(0,x)
        let tiny = check_tau_delta_bound(&s, 0, &psi, 1e-9, 300).unwrap();
        assert!(tiny.passed);
        assert!(tiny.constants["lhs_mean"].abs() < 1e-8);
        assert!(tiny.constants["lhs_mean"] <= psi.eval(0.0, 0).unwrap());
    }

    #[test]
    fn tau_delta_two_state() {
        let (sampler, psi) = two_state_psi(71);
        for x0 in 0..2 {
            let report = check_tau_delta_bound(&sampler, x0, &psi, 1.0, 5000).unwrap();
            assert!(report.passed, "x0={x0}: {report}");
        }
    }

    #[test]
    fn estimates_deterministic_across_thread_counts() {
        let run = |threads: usize| -> MomentEstimate {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let s = two_state_sampler(1.0, 73);
                s.estimate_hitting_moment(Start::State(0), &sqrt_profile(), 4000)
                    .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn condition1_implies_step_bounds_chain() {
        // psi built from hitting estimates feeds Step 1 and Step 4 on the
        // same model and passes.
        let sampler = two_state_sampler(1.0, 79);
        let profile = sqrt_profile();
        let t_grid: Vec<f64> = (0..=20).map(|i| i as f64).collect();
        let (psi, _) = psi_via_hitting(&sampler, &profile, &t_grid, &[0, 1], 10_000).unwrap();
        let step1 = check_step1_bound(&sampler, &psi, &[0, 1], 5000).unwrap();
        assert!(step1.passed, "{step1}");
        let cal = calibrate_r(&sampler, &psi, 5000, false).unwrap();
        assert!(cal.report.passed);
        let step4 = check_step4_bound(&sampler, &psi, cal.r0, 3000, 1e4).unwrap();
        assert!(step4.passed, "{step4}");
    }
}
