//! Concrete Markov models: finite-state continuous-time chains and 1-D
//! diffusions, with exact generator application, path sampling, and
//! stationary/transient solvers.

mod ctmc;
mod diffusion;
mod registry;
mod trajectory;

pub use ctmc::Ctmc;
pub use diffusion::Diffusion1d;
pub use registry::{model_from_registry, ModelSpec};
pub use trajectory::{OccupationSegments, Segment, Trajectory};

use serde::Serialize;

use crate::error::{Error, Result};

/// The target set C: a petite/compact set, structurally asserted for
/// bundled models, never algorithmically certified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TargetSet {
    /// Subset of chain states.
    States(Vec<usize>),
    /// Closed subinterval of a diffusion domain.
    Interval { lo: f64, hi: f64 },
}

impl TargetSet {
    pub fn states(mut s: Vec<usize>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Config("target set must be non-empty".into()));
        }
        s.sort_unstable();
        s.dedup();
        Ok(TargetSet::States(s))
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Config(format!(
                "target interval [{lo}, {hi}] is empty"
            )));
        }
        Ok(TargetSet::Interval { lo, hi })
    }

    /// Empty set, used only by negative tests.
    pub fn empty() -> Self {
        TargetSet::States(Vec::new())
    }

    pub fn contains_state(&self, x: usize) -> bool {
        match self {
            TargetSet::States(s) => s.binary_search(&x).is_ok(),
            TargetSet::Interval { .. } => false,
        }
    }

    pub fn contains_point(&self, x: f64) -> bool {
        match self {
            TargetSet::States(_) => false,
            TargetSet::Interval { lo, hi } => *lo <= x && x <= *hi,
        }
    }

    pub fn indicator_state(&self, x: usize) -> f64 {
        if self.contains_state(x) {
            1.0
        } else {
            0.0
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TargetSet::States(s) => {
                if s.len() <= 8 {
                    format!("{s:?}")
                } else {
                    format!("[{}..{}; {} states]", s[0], s[s.len() - 1], s.len())
                }
            }
            TargetSet::Interval { lo, hi } => format!("[{lo}, {hi}]"),
        }
    }
}

/// A model bundled with its identifier, as produced by the registry.
#[derive(Debug, Clone)]
pub enum Model {
    Chain(Ctmc),
    Diffusion(Diffusion1d),
}

impl Model {
    pub fn as_chain(&self) -> Result<&Ctmc> {
        match self {
            Model::Chain(c) => Ok(c),
            Model::Diffusion(_) => Err(Error::Config(
                "operation requires a finite-state chain model".into(),
            )),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Model::Chain(c) => c.id(),
            Model::Diffusion(d) => d.id(),
        }
    }
}
