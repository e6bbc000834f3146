//! 1-D diffusions `dX = b(X) dt + sigma(X) dW` on a closed interval with
//! reflecting boundaries, discretized by Euler-Maruyama.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::trajectory::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Diffusion1d {
    id: String,
    drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    sigma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lo: f64,
    hi: f64,
    step: f64,
}

impl fmt::Debug for Diffusion1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Diffusion1d {{ id: {}, domain: [{}, {}], step: {} }}",
            self.id, self.lo, self.hi, self.step
        )
    }
}

impl Diffusion1d {
    pub fn new(
        id: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
        step: f64,
    ) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("empty domain [{lo}, {hi}]")));
        }
        if !(step > 0.0) {
            return Err(Error::Config(format!("step must be > 0, got {step}")));
        }
        let d = Diffusion1d {
            id: id.into(),
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            lo,
            hi,
            step,
        };
        // sigma > 0 and both coefficients finite, probed on a coarse grid.
        for k in 0..=32 {
            let x = lo + (hi - lo) * k as f64 / 32.0;
            let s = (d.sigma)(x);
            let b = (d.drift)(x);
            if !(s > 0.0) || !s.is_finite() || !b.is_finite() {
                return Err(Error::Config(format!(
                    "coefficients invalid at x={x}: b={b}, sigma={s}"
                )));
            }
        }
        Ok(d)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn drift_at(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn sigma_at(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    /// Central finite-difference realization of `L f = b f' + (sigma^2/2) f''`.
    pub fn generator_apply(&self, f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::Domain {
                what: "h",
                value: h,
                expected: "> 0",
            });
        }
        if x - h < self.lo || x + h > self.hi {
            return Err(Error::Domain {
                what: "x",
                value: x,
                expected: "h-interior to the domain",
            });
        }
        let (fp, fm, f0) = (f(x + h), f(x - h), f(x));
        let b = (self.drift)(x);
        let s = (self.sigma)(x);
        Ok(b * (fp - fm) / (2.0 * h) + 0.5 * s * s * (fp - 2.0 * f0 + fm) / (h * h))
    }

    /// One Euler-Maruyama step with boundary reflection.
    pub fn step_from<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let mut next =
            x + (self.drift)(x) * self.step + (self.sigma)(x) * self.step.sqrt() * z;
        // Reflect into the domain; repeat for the rare double-overshoot.
        for _ in 0..64 {
            if next < self.lo {
                next = 2.0 * self.lo - next;
            } else if next > self.hi {
                next = 2.0 * self.hi - next;
            } else {
                break;
            }
        }
        next.clamp(self.lo, self.hi)
    }

    /// Euler-Maruyama path on `[0, horizon]`.
    pub fn sample_path<R: Rng>(&self, x0: f64, horizon: f64, rng: &mut R) -> Result<Trajectory> {
        if !(self.lo <= x0 && x0 <= self.hi) {
            return Err(Error::Config(format!("x0 = {x0} outside domain")));
        }
        if !(horizon > 0.0) {
            return Err(Error::Domain {
                what: "horizon",
                value: horizon,
                expected: "> 0",
            });
        }
        let n = (horizon / self.step).ceil() as usize;
        let mut positions = Vec::with_capacity(n + 1);
        positions.push(x0);
        let mut x = x0;
        for _ in 0..n {
            x = self.step_from(x, rng);
            positions.push(x);
        }
        Ok(Trajectory::GridPath {
            step: self.step,
            positions,
        })
    }
}
