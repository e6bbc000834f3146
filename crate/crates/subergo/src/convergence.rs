//! Total-variation convergence curves and the vanishing-rate check.
//!
//! For a chain with stationary distribution pi, the curve is
//! `tv(t) = ||P_t(x0,.) - pi||_TV` computed from exact transients, and the
//! rate product is `phi(Hinv(t)) * tv(t)`. The theory predicts the product
//! vanishes; since a limit is not finitely checkable, the contract is a
//! windowed-decay gate: consecutive window averages of the product beyond a
//! burn-in must be non-increasing, and the final window must sit below a
//! tenth of the first.
//!
//! TV convention: `tv = (1/2) sum |mu_i - nu_i|`, which equals
//! `sup_A (mu(A) - nu(A))` and the minimal coupling mismatch probability.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::Ctmc;
use crate::rates::RateProfile;
use crate::report::CheckReport;

/// Total variation distance between two probability vectors.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::Dimension {
            expected: mu.len(),
            got: nu.len(),
        });
    }
    for (name, v) in [("mu", mu), ("nu", nu)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("{name} sums to {sum}, not 1")));
        }
    }
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// An exact TV curve with its rate product.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TvCurve {
    pub model_id: String,
    pub x0: usize,
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
    /// `phi(Hinv(t))` at each time.
    pub rate_value: Vec<f64>,
    /// `rate_value * tv`, pointwise.
    pub rate_product: Vec<f64>,
}

/// Exact TV curve: transient rows against the stationary distribution, with
/// each transient solve independent and evaluated in parallel.
pub fn tv_curve(model: &Ctmc, x0: usize, profile: &RateProfile, times: &[f64]) -> Result<TvCurve> {
    for w in times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Domain {
                what: "times",
                value: w[1],
                expected: "increasing",
            });
        }
    }
    let pi = model.stationary_distribution()?;
    let tv: Vec<f64> = times
        .par_iter()
        .map(|&t| {
            let row = model.transient_distribution(x0, t)?;
            tv_distance(&row, &pi)
        })
        .collect::<Result<_>>()?;
    let rate_value = profile.rate_curve(times)?;
    let rate_product: Vec<f64> = rate_value.iter().zip(&tv).map(|(r, v)| r * v).collect();
    Ok(TvCurve {
        model_id: model.id().to_string(),
        x0,
        times: times.to_vec(),
        tv,
        rate_value,
        rate_product,
    })
}

/// Windowed-decay gate for `lim rate_product = 0`: beyond `burn_in`,
/// consecutive `window`-point averages must be non-increasing and the final
/// average must be below a tenth of the first.
pub fn check_vanishing(curve: &TvCurve, burn_in: f64, window: usize) -> Result<CheckReport> {
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let tail: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(curve.rate_product.iter().zip(&curve.rate_value))
        .filter(|(t, _)| **t >= burn_in)
        .map(|(_, (p, r))| (*p, *r))
        .collect();
    if tail.len() < 2 * window {
        return Err(Error::InsufficientData(format!(
            "need at least {} points beyond burn_in, got {}",
            2 * window,
            tail.len()
        )));
    }
    let averages: Vec<f64> = tail
        .chunks_exact(window)
        .map(|c| c.iter().map(|(p, _)| p).sum::<f64>() / window as f64)
        .collect();
    // The transient solver carries ~1e-12 absolute TV error, so the product
    // cannot be resolved below that times the rate value.
    let noise_floor: Vec<f64> = tail
        .chunks_exact(window)
        .map(|c| {
            c.iter().map(|(_, r)| *r).fold(0.0, f64::max) * 1e-11
        })
        .collect();
    let mut report = CheckReport::new(format!(
        "vanishing_rate_product[{}; x0={}]",
        curve.model_id, curve.x0
    ));
    for (i, w) in averages.windows(2).enumerate() {
        report.record(
            format!("window {} -> {}", i, i + 1),
            w[1],
            w[0],
            1e-9 * w[0].abs() + noise_floor[i + 1],
        );
    }
    let first = averages[0];
    let last = *averages.last().expect("at least two windows");
    report.record("final < first/10", last, first / 10.0, 0.0);
    report.set_constant("first_window_avg", first);
    report.set_constant("final_window_avg", last);
    Ok(report)
}

/// Least-squares slope of `ln tv` against `ln t` on the given time range.
pub fn fit_polynomial_rate(curve: &TvCurve, t_lo: f64, t_hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.tv)
        .filter(|(t, v)| **t >= t_lo && **t <= t_hi && **t > 0.0 && **v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need >= 3 positive points in [{t_lo}, {t_hi}], got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("degenerate time range".into()));
    }
    let sxy: f64 = pts
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    Ok(sxy / sxx)
}
