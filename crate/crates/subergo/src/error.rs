//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {what} = {value} (expected {expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("quadrature failed to reach tolerance {tolerance:e} within {max_intervals} intervals")]
    QuadratureNoConvergence {
        tolerance: f64,
        max_intervals: usize,
    },

    #[error("root bracketing failed on [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("uniformization rate*t = {lambda_t:.3e} exceeds cap {cap:.3e}")]
    UniformizationCap { lambda_t: f64, cap: f64 },

    #[error("linear solve degenerate: {0}")]
    SingularSystem(String),

    /// Auto-extracted target set reached the state-space truncation boundary,
    /// signalling that the Lyapunov candidate is not valid at this truncation.
    #[error("auto target set touches truncation boundary at state {state}")]
    AutoSetTouchesBoundary { state: usize },

    #[error("integrand tail estimate {estimate:.3e} exceeds tolerance {tolerance:.3e} at horizon {horizon}")]
    TailBound {
        estimate: f64,
        tolerance: f64,
        horizon: f64,
    },

    /// Censored-path mass too large for the estimate to be trusted.
    #[error("estimate unreliable: censored fraction {censored_fraction:.3e} > {threshold:.3e}")]
    Unreliable {
        censored_fraction: f64,
        threshold: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
