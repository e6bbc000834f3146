//! subergo — executable subgeometric-ergodicity analysis for Markov models.
//!
//! The toolkit builds concave rate functions `phi` together with
//! `H(u) = integral_1^u ds/phi(s)` and its inverse, verifies three
//! equivalent stability conditions on concrete models — the Foster-Lyapunov
//! drift inequality `L V <= -phi(V) + K 1_C`, a time-space Lyapunov function
//! `psi(t,x)`, and moment bounds on randomized occupation-time hitting
//! clocks — and checks the implied total-variation convergence rate
//! `phi(Hinv(t)) * ||P_t(x,.) - pi||_TV -> 0` exactly on finite chains.

pub mod cli;
pub mod convergence;
pub mod drift;
pub mod error;
pub mod hitting;
pub mod models;
pub mod rates;
pub mod report;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use report::{CheckReport, Violation};
