//! Bundled model registry, addressable from scenario config.
//!
//! Chains are irreducible by construction (single communicating class);
//! this is a structural assertion documented per model, not an algorithmic
//! certificate. Countable chains are truncated to `{0..n_max}` with the
//! boundary outflow redirected inward, and carry the truncation marker so
//! that auto-extracted target sets can refuse candidates that lean on the
//! boundary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ctmc, Diffusion1d, Model};
use crate::error::{Error, Result};

/// Model specification as it appears in scenario config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Two states, unit jump rates both ways.
    TwoStateSymmetric,
    /// Single absorbing state; occupation time is exactly t.
    AbsorbingPoint,
    /// Birth-death with constant rates: up lambda, down mu, on {0..n_max}.
    BdGeometric { lambda: f64, mu: f64, n_max: usize },
    /// Birth-death with q(n,n+1)=1, q(n,n-1)=1+c/n on {1..n_max}, q(0,1)=1.
    BdPolynomial { c: f64, n_max: usize },
    /// Ornstein-Uhlenbeck: b = -theta x, sigma = sqrt(2).
    Ou { theta: f64 },
    /// Langevin with potential (1+x^2)^(beta/2): subexponential for beta < 1.
    HeavyTailLangevin { beta: f64 },
    /// Rate matrix from a CSV file (first line `n=<count>`, then n rows).
    Csv { path: String },
}

pub fn model_from_registry(spec: &ModelSpec) -> Result<Model> {
    match spec {
        ModelSpec::TwoStateSymmetric => Ok(Model::Chain(Ctmc::new(
            "two_state_symmetric",
            2,
            vec![-1.0, 1.0, 1.0, -1.0],
        )?)),
        ModelSpec::AbsorbingPoint => {
            Ok(Model::Chain(Ctmc::new("absorbing_point", 1, vec![0.0])?))
        }
        ModelSpec::BdGeometric { lambda, mu, n_max } => {
            if !(*lambda > 0.0 && *mu > 0.0) {
                return Err(Error::Config(format!(
                    "bd_geometric needs lambda, mu > 0, got ({lambda}, {mu})"
                )));
            }
            let chain = birth_death(
                &format!("bd_geometric(lambda={lambda},mu={mu},N={n_max})"),
                *n_max,
                |_| *lambda,
                |_| *mu,
            )?;
            Ok(Model::Chain(chain.with_truncation_boundary(*n_max)))
        }
        ModelSpec::BdPolynomial { c, n_max } => {
            if !(*c > 0.0) {
                return Err(Error::Config(format!("bd_polynomial needs c > 0, got {c}")));
            }
            let c = *c;
            let chain = birth_death(
                &format!("bd_polynomial(c={c},N={n_max})"),
                *n_max,
                |_| 1.0,
                move |n| 1.0 + c / n as f64,
            )?;
            Ok(Model::Chain(chain.with_truncation_boundary(*n_max)))
        }
        ModelSpec::Ou { theta } => {
            let theta = *theta;
            if !(theta > 0.0) {
                return Err(Error::Config(format!("ou needs theta > 0, got {theta}")));
            }
            Ok(Model::Diffusion(Diffusion1d::new(
                format!("ou(theta={theta})"),
                move |x| -theta * x,
                |_| std::f64::consts::SQRT_2,
                -8.0,
                8.0,
                1e-2,
            )?))
        }
        ModelSpec::HeavyTailLangevin { beta } => {
            let beta = *beta;
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config(format!(
                    "heavy_tail_langevin needs beta in (0,1), got {beta}"
                )));
            }
            // b(x) = -d/dx (1+x^2)^(beta/2) = -beta x (1+x^2)^(beta/2 - 1)
            Ok(Model::Diffusion(Diffusion1d::new(
                format!("heavy_tail_langevin(beta={beta})"),
                move |x| -beta * x * (1.0 + x * x).powf(0.5 * beta - 1.0),
                |_| std::f64::consts::SQRT_2,
                -50.0,
                50.0,
                1e-2,
            )?))
        }
        ModelSpec::Csv { path } => Ok(Model::Chain(ctmc_from_csv(Path::new(path))?)),
    }
}

/// Truncated birth-death chain on `{0..n_max}`: up/down rates by state, with
/// the up-jump removed at the boundary (outflow redirected inward).
fn birth_death(
    id: &str,
    n_max: usize,
    up: impl Fn(usize) -> f64,
    down: impl Fn(usize) -> f64,
) -> Result<Ctmc> {
    if n_max < 1 {
        return Err(Error::Config("birth-death needs n_max >= 1".into()));
    }
    let n = n_max + 1;
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        if i < n_max {
            let r = up(i);
            q[i * n + i + 1] = r;
            diag -= r;
        }
        if i > 0 {
            let r = down(i);
            q[i * n + i - 1] = r;
            diag -= r;
        }
        q[i * n + i] = diag;
    }
    Ctmc::new(id, n, q)
}

/// Load a rate matrix from CSV: first line `n=<count>`, then `n` rows of
/// `n` comma-separated entries (row-major).
fn ctmc_from_csv(path: &Path) -> Result<Ctmc> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty rate-matrix file", path.display())))?;
    let n: usize = header
        .strip_prefix("n=")
        .ok_or_else(|| Error::Config(format!("expected header 'n=<count>', got '{header}'")))?
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad state count in '{header}': {e}")))?;
    let mut q = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(Error::Config(format!("more than {n} matrix rows")));
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("row {i}: bad entry '{v}': {e}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: row.len(),
            });
        }
        q.extend(row);
    }
    if q.len() != n * n {
        return Err(Error::Config(format!(
            "expected {n} rows, got {}",
            q.len() / n
        )));
    }
    Ctmc::new(format!("csv({})", path.display()), n, q)
}
