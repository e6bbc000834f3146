//! Rate functions and their integrated machinery.
//!
//! A rate function `phi` is a C^1, strictly increasing, strictly concave
//! function on `[1, inf)` with `phi(x) <= x`, `phi(x)/x` decreasing to 0 and
//! `phi(x) - x phi'(x)` increasing to infinity. From it we build
//!
//! ```text
//! H(u)      = integral_1^u ds / phi(s)        (strictly increasing, H(1)=0)
//! Hinv(t)   = the inverse of H                (solves y' = phi(y), y(0)=1)
//! rate(t)   = phi(Hinv(t))                    (the convergence-rate curve)
//! ```
//!
//! `Hinv` can be evaluated three ways: closed form (polynomial phi), by
//! integrating the ODE `y' = phi(y)` with cached knots, or by bracketed
//! root finding on the quadrature of `H`. The methods cross-check each
//! other; agreement is part of the acceptance suite.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::report::CheckReport;

/// Default relative tolerance for closed-form cross-checks.
pub const TOL_CLOSED_FORM: f64 = 1e-8;
/// Default relative tolerance for ODE/quadrature evaluation paths.
pub const TOL_NUMERIC: f64 = 1e-6;

/// The concave rate function phi on `[1, inf)`.
#[derive(Clone)]
pub enum RateFunction {
    /// `phi(x) = scale * x^alpha` with `alpha in (0,1)`, `scale in (0,1]`.
    Polynomial { alpha: f64, scale: f64 },
    /// `phi(x) = 1 + ln x`.
    LogSmoothed,
    /// User-supplied evaluator and its derivative. The derivative is
    /// required; validation never differentiates callbacks numerically.
    Custom {
        name: String,
        phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        dphi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFunction::Polynomial { alpha, scale } => {
                write!(f, "Polynomial {{ alpha: {alpha}, scale: {scale} }}")
            }
            RateFunction::LogSmoothed => write!(f, "LogSmoothed"),
            RateFunction::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl RateFunction {
    pub fn polynomial(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "polynomial rate needs alpha in (0,1), got {alpha}"
            )));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!(
                "polynomial rate needs scale in (0,1] so that phi(x) <= x, got {scale}"
            )));
        }
        Ok(RateFunction::Polynomial { alpha, scale })
    }

    pub fn custom(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        RateFunction::Custom {
            name: name.into(),
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
        }
    }

    /// phi(x) without domain checking (callers guarantee x >= 1).
    pub(crate) fn eval(&self, x: f64) -> f64 {
        match self {
            RateFunction::Polynomial { alpha, scale } => scale * x.powf(*alpha),
            RateFunction::LogSmoothed => 1.0 + x.ln(),
            RateFunction::Custom { phi, .. } => phi(x),
        }
    }

    /// phi'(x) without domain checking.
    pub(crate) fn deriv(&self, x: f64) -> f64 {
        match self {
            RateFunction::Polynomial { alpha, scale } => scale * alpha * x.powf(alpha - 1.0),
            RateFunction::LogSmoothed => 1.0 / x,
            RateFunction::Custom { dphi, .. } => dphi(x),
        }
    }

    pub fn id(&self) -> String {
        match self {
            RateFunction::Polynomial { alpha, scale } => format!("poly(alpha={alpha},scale={scale})"),
            RateFunction::LogSmoothed => "log_smoothed".to_string(),
            RateFunction::Custom { name, .. } => format!("custom({name})"),
        }
    }

    fn has_closed_form(&self) -> bool {
        matches!(self, RateFunction::Polynomial { .. })
    }
}

/// How `Hinv` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HInvMethod {
    /// Closed form; polynomial phi only.
    ClosedForm,
    /// Integrate `y' = phi(y), y(0) = 1` with cached knots.
    OdeIntegrate,
    /// Invert the quadrature of `H` by bracketed bisection.
    BisectOnQuadrature,
}

/// A rate function packaged with an inversion method, a tolerance, and the
/// eager ODE knot cache. Immutable after construction; share freely.
#[derive(Debug, Clone)]
pub struct RateProfile {
    rate: RateFunction,
    method: HInvMethod,
    tolerance: f64,
    /// Accepted integration knots `(t, y, phi(y))` of `y' = phi(y)`, built
    /// eagerly at construction up to `t_cache_max` and never mutated.
    knots: Arc<Vec<Knot>>,
    t_cache_max: f64,
}

#[derive(Debug, Clone, Copy)]
struct Knot {
    t: f64,
    y: f64,
    /// phi(y): the slope at this knot, reused by Hermite interpolation.
    dy: f64,
}

/// Cache horizon: covers every bundled scenario including the
/// subexponential-rate probes at t = 2^20.
const DEFAULT_T_CACHE_MAX: f64 = 1.2e6;

impl RateProfile {
    /// Profile with the method chosen automatically: closed form when phi
    /// has one, ODE integration otherwise.
    pub fn new(rate: RateFunction) -> Self {
        let method = if rate.has_closed_form() {
            HInvMethod::ClosedForm
        } else {
            HInvMethod::OdeIntegrate
        };
        Self::with_method(rate, method, TOL_NUMERIC).expect("auto method is always valid")
    }

    pub fn with_method(rate: RateFunction, method: HInvMethod, tolerance: f64) -> Result<Self> {
        if method == HInvMethod::ClosedForm && !rate.has_closed_form() {
            return Err(Error::Config(format!(
                "{} has no closed-form Hinv",
                rate.id()
            )));
        }
        if !(tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {tolerance}")));
        }
        let knots = if method == HInvMethod::OdeIntegrate {
            Arc::new(integrate_knots(&rate, DEFAULT_T_CACHE_MAX))
        } else {
            Arc::new(Vec::new())
        };
        // The cache can stop early for a phi violating the growth assumptions.
        let t_cache_max = knots.last().map_or(0.0, |k| k.t);
        Ok(RateProfile {
            rate,
            method,
            tolerance,
            knots,
            t_cache_max,
        })
    }

    pub fn rate(&self) -> &RateFunction {
        &self.rate
    }

    pub fn method(&self) -> HInvMethod {
        self.method
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn id(&self) -> String {
        self.rate.id()
    }

    /// phi(x) for x >= 1.
    pub fn phi(&self, x: f64) -> Result<f64> {
        if !(x >= 1.0) {
            return Err(Error::Domain {
                what: "x",
                value: x,
                expected: ">= 1",
            });
        }
        Ok(self.rate.eval(x))
    }

    /// phi'(x) for x >= 1.
    pub fn phi_deriv(&self, x: f64) -> Result<f64> {
        if !(x >= 1.0) {
            return Err(Error::Domain {
                what: "x",
                value: x,
                expected: ">= 1",
            });
        }
        Ok(self.rate.deriv(x))
    }

    /// `H(u) = integral_1^u ds/phi(s)` for u >= 1.
    pub fn h(&self, u: f64) -> Result<f64> {
        if !(u >= 1.0) {
            return Err(Error::Domain {
                what: "u",
                value: u,
                expected: ">= 1",
            });
        }
        match &self.rate {
            RateFunction::Polynomial { alpha, scale } => {
                // integral of s^-alpha / scale = (u^(1-alpha) - 1) / ((1-alpha) scale)
                Ok((u.powf(1.0 - alpha) - 1.0) / ((1.0 - alpha) * scale))
            }
            _ => {
                let f = |s: f64| 1.0 / self.rate.eval(s);
                adaptive_simpson(&f, 1.0, u, self.tolerance.min(1e-10))
            }
        }
    }

    /// `Hinv(t)` for t >= 0, by the profile's method.
    pub fn h_inv(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                expected: ">= 0",
            });
        }
        match self.method {
            HInvMethod::ClosedForm => Ok(self.h_inv_closed_form(t)),
            HInvMethod::OdeIntegrate => Ok(self.h_inv_ode(t)),
            HInvMethod::BisectOnQuadrature => self.h_inv_bisect(t),
        }
    }

    fn h_inv_closed_form(&self, t: f64) -> f64 {
        match &self.rate {
            RateFunction::Polynomial { alpha, scale } => {
                // inverse of H: u = (1 + (1-alpha) scale t)^(1/(1-alpha))
                (1.0 + (1.0 - alpha) * scale * t).powf(1.0 / (1.0 - alpha))
            }
            _ => unreachable!("validated at construction"),
        }
    }

    fn h_inv_ode(&self, t: f64) -> f64 {
        if self.knots.is_empty() {
            // OdeIntegrate was not the configured method; integrate transiently.
            return integrate_to(&self.rate, 0.0, 1.0, t);
        }
        if t > self.t_cache_max {
            let last = *self.knots.last().expect("cache non-empty");
            return integrate_to(&self.rate, last.t, last.y, t);
        }
        // Binary search for the bracketing knots, then cubic Hermite.
        let idx = match self
            .knots
            .binary_search_by(|k| k.t.partial_cmp(&t).expect("knot times are finite"))
        {
            Ok(i) => return self.knots[i].y,
            Err(i) => i,
        };
        let (a, b) = (self.knots[idx - 1], self.knots[idx]);
        hermite(a, b, t)
    }

    fn h_inv_bisect(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(1.0);
        }
        // Bracket: grow the upper end geometrically until H(hi) >= t.
        let mut hi = 2.0;
        let mut h_hi = self.h(hi)?;
        let mut guard = 0;
        while h_hi < t {
            hi *= 4.0;
            h_hi = self.h(hi)?;
            guard += 1;
            if guard > 200 || !hi.is_finite() {
                return Err(Error::BracketFailure { lo: 1.0, hi });
            }
        }
        let mut lo = 1.0;
        // Bisect to relative tolerance on u.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.h(mid)? < t {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 0.25 * self.tolerance * lo.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// The convergence-rate curve `r(t) = phi(Hinv(t))` at each time.
    pub fn rate_curve(&self, times: &[f64]) -> Result<Vec<f64>> {
        for w in times.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Domain {
                    what: "times",
                    value: w[1],
                    expected: "non-decreasing",
                });
            }
        }
        times
            .iter()
            .map(|&t| {
                let y = self.h_inv(t)?;
                self.phi(y)
            })
            .collect()
    }
}

/// Cubic Hermite interpolation between two knots with known slopes.
fn hermite(a: Knot, b: Knot, t: f64) -> f64 {
    let h = b.t - a.t;
    if h <= 0.0 {
        return a.y;
    }
    let s = (t - a.t) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * a.y
        + (s3 - 2.0 * s2 + s) * h * a.dy
        + (-2.0 * s3 + 3.0 * s2) * b.y
        + (s3 - s2) * h * b.dy
}

/// Dormand-Prince 5(4) step for the autonomous ODE `y' = phi(y)`.
/// Returns (y_next, error_estimate).
fn dopri_step(rate: &RateFunction, y: f64, h: f64) -> (f64, f64) {
    let f = |y: f64| rate.eval(y.max(1.0));
    let k1 = f(y);
    let k2 = f(y + h * 0.2 * k1);
    let k3 = f(y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
    let k4 = f(y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3));
    let k5 = f(y
        + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3
            - 212.0 / 729.0 * k4));
    let k6 = f(y
        + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3
            + 49.0 / 176.0 * k4
            - 5103.0 / 18656.0 * k5));
    let y5 = y
        + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4
            - 2187.0 / 6784.0 * k5
            + 11.0 / 84.0 * k6);
    let k7 = f(y5);
    let y4 = y
        + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 + 393.0 / 640.0 * k4
            - 92097.0 / 339200.0 * k5
            + 187.0 / 2100.0 * k6
            + 1.0 / 40.0 * k7);
    (y5, (y5 - y4).abs())
}

const ODE_RTOL: f64 = 1e-10;
/// Knot budget for the eager cache; a genuinely subexponential phi stays far
/// below this, an invalid (super-linear) phi hits it and the cache simply
/// stops early, leaving later queries to the transient integrator.
const MAX_KNOTS: usize = 400_000;
const Y_CACHE_MAX: f64 = 1e15;

/// One adaptive step attempt. Returns `Some((t, y, h_next))` on acceptance.
fn try_step(rate: &RateFunction, t: f64, y: f64, h: &mut f64) -> Option<(f64, f64)> {
    let (y_next, err) = dopri_step(rate, y, *h);
    let tol = ODE_RTOL * y.abs().max(1.0);
    if !y_next.is_finite() || !err.is_finite() {
        *h *= 0.1;
        return None;
    }
    if err <= tol || *h <= 1e-12 * t.max(1.0) {
        let accepted = *h;
        *h *= (tol / err.max(1e-300)).powf(0.2).clamp(0.2, 5.0) * 0.9;
        Some((t + accepted, y_next))
    } else {
        *h *= (tol / err).powf(0.2).max(0.1) * 0.9;
        None
    }
}

/// Integrate `y' = phi(y)` from `(t0, y0)` to `t_end` adaptively, returning
/// y(t_end). A phi violating the growth assumptions may drive y to overflow;
/// the result is then infinite and downstream checks flag it.
fn integrate_to(rate: &RateFunction, t0: f64, y0: f64, t_end: f64) -> f64 {
    let mut t = t0;
    let mut y = y0;
    let mut h = ((t_end - t0) / 16.0).clamp(1e-8, 0.1);
    while t < t_end {
        if !y.is_finite() {
            return f64::INFINITY;
        }
        if h < 1e-300 {
            return f64::INFINITY;
        }
        h = h.min(t_end - t);
        if let Some((t2, y2)) = try_step(rate, t, y, &mut h) {
            t = t2;
            y = y2;
        }
    }
    y
}

/// Build the eager knot cache on `[0, t_max]`, bounded in size and magnitude.
fn integrate_knots(rate: &RateFunction, t_max: f64) -> Vec<Knot> {
    let mut knots = Vec::with_capacity(1024);
    let mut t = 0.0;
    let mut y = 1.0f64;
    knots.push(Knot {
        t,
        y,
        dy: rate.eval(y),
    });
    let mut h = 1e-4f64;
    while t < t_max && knots.len() < MAX_KNOTS && y < Y_CACHE_MAX && h >= 1e-300 {
        h = h.min(t_max - t);
        if let Some((t2, y2)) = try_step(rate, t, y, &mut h) {
            t = t2;
            y = y2;
            knots.push(Knot {
                t,
                y,
                dy: rate.eval(y),
            });
        }
    }
    knots
}

const MAX_SIMPSON_INTERVALS: usize = 1 << 22;

/// Adaptive Simpson quadrature with an interval budget.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut used = 0usize;
    let v = simpson_rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        rel_tol * whole.abs().max(1e-300),
        40,
        &mut used,
    );
    if used >= MAX_SIMPSON_INTERVALS {
        return Err(Error::QuadratureNoConvergence {
            tolerance: rel_tol,
            max_intervals: MAX_SIMPSON_INTERVALS,
        });
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
    used: &mut usize,
) -> f64 {
    *used += 1;
    if *used >= MAX_SIMPSON_INTERVALS {
        return whole;
    }
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, used)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, used)
    }
}

// ---------------------------------------------------------------------------
// Standing-assumption checks
// ---------------------------------------------------------------------------

/// Multiplier for the growth floor on `phi(x) - x phi'(x)` at the grid tail.
/// "increases to infinity" on a finite grid is checked as: non-decreasing,
/// and tail value strictly above `GROWTH_FLOOR_FACTOR * head value`.
pub const GROWTH_FLOOR_FACTOR: f64 = 2.0;

/// Grid validation of every standing assumption on phi.
pub fn validate_assumptions(profile: &RateProfile, grid: &[f64]) -> Result<CheckReport> {
    validate_assumptions_with_floor(profile, grid, GROWTH_FLOOR_FACTOR)
}

pub fn validate_assumptions_with_floor(
    profile: &RateProfile,
    grid: &[f64],
    growth_floor_factor: f64,
) -> Result<CheckReport> {
    if grid.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "assumption grid needs >= 3 points, got {}",
            grid.len()
        )));
    }
    let mut report = CheckReport::new(format!("assumptions[{}]", profile.id()));
    let phi: Vec<f64> = grid.iter().map(|&x| profile.phi(x)).collect::<Result<_>>()?;
    let dphi: Vec<f64> = grid
        .iter()
        .map(|&x| profile.phi_deriv(x))
        .collect::<Result<_>>()?;

    // phi(1) > 0 at the grid head if it starts at 1; otherwise the first point.
    report.record("phi(head) > 0", 0.0, phi[0], 0.0);

    for (i, (&x, &p)) in grid.iter().zip(&phi).enumerate() {
        // phi(x) <= x
        report.record(format!("phi<=x at x={x}"), p, x, 1e-12 * x);
        if i + 1 < grid.len() {
            // strict increase
            report.record_predicate(
                format!("phi strictly increasing at x={x}"),
                phi[i + 1] > p,
            );
            // phi(x)/x strictly decreasing on the sampled grid
            report.record_predicate(
                format!("phi(x)/x decreasing at x={x}"),
                phi[i + 1] / grid[i + 1] < p / x,
            );
        }
    }

    // Secant concavity on consecutive triples.
    for w in grid.windows(3).zip(phi.windows(3)) {
        let ([x, y, z], [px, py, pz]) = (w.0, w.1) else {
            unreachable!()
        };
        let s1 = (py - px) / (y - x);
        let s2 = (pz - py) / (z - y);
        report.record(
            format!("concavity at ({x},{y},{z})"),
            s2,
            s1,
            1e-12 * s1.abs().max(1.0),
        );
    }

    // g(x) = phi(x) - x phi'(x): non-decreasing, with tail growth.
    let g: Vec<f64> = grid
        .iter()
        .zip(phi.iter().zip(&dphi))
        .map(|(&x, (&p, &dp))| p - x * dp)
        .collect();
    for (i, w) in g.windows(2).enumerate() {
        report.record(
            format!("phi - x phi' non-decreasing at x={}", grid[i]),
            w[0],
            w[1],
            1e-12 * w[0].abs().max(1.0),
        );
    }
    let head = g[0];
    let tail = *g.last().expect("grid checked non-empty");
    let floor = if head > 0.0 {
        growth_floor_factor * head
    } else {
        0.0
    };
    report.record_predicate(
        format!("phi - x phi' tail growth: {tail} > {floor}"),
        tail > floor,
    );
    report.set_constant("growth_head", head);
    report.set_constant("growth_tail", tail);
    Ok(report)
}

/// Lemma check: `Hinv(s+t) <= Hinv(s) * Hinv(t)` on the supplied pairs.
pub fn check_submultiplicative(profile: &RateProfile, pairs: &[(f64, f64)]) -> Result<CheckReport> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no (s,t) pairs supplied".into()));
    }
    let mut report = CheckReport::new(format!("submultiplicative[{}]", profile.id()));
    for &(s, t) in pairs {
        let lhs = profile.h_inv(s + t)?;
        let rhs = profile.h_inv(s)? * profile.h_inv(t)?;
        report.record(
            format!("(s,t)=({s},{t})"),
            lhs,
            rhs * (1.0 + profile.tolerance),
            0.0,
        );
    }
    Ok(report)
}

/// Scaling check: `phi(kappa x) <= kappa phi(x)` for kappa >= 1.
pub fn check_scaling(profile: &RateProfile, samples: &[(f64, f64)]) -> Result<CheckReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no (x,kappa) samples supplied".into()));
    }
    let mut report = CheckReport::new(format!("scaling[{}]", profile.id()));
    for &(x, kappa) in samples {
        if kappa < 1.0 {
            return Err(Error::Domain {
                what: "kappa",
                value: kappa,
                expected: ">= 1",
            });
        }
        let lhs = profile.phi(kappa * x)?;
        let rhs = kappa * profile.phi(x)?;
        report.record(
            format!("(x,kappa)=({x},{kappa})"),
            lhs,
            rhs * (1.0 + profile.tolerance),
            0.0,
        );
    }
    Ok(report)
}
