//! Counter-based random-number substreams.
//!
//! Every Monte-Carlo path draws from a ChaCha stream addressed by
//! `(master_seed, path_index, role)`. Streams are independent of worker
//! count and of evaluation order, so estimates are bitwise reproducible
//! whether the path loop runs on one thread or eight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Role of a substream within one path, kept disjoint so that e.g. drawing
/// the exponential clock variable never perturbs the path's own randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    /// Trajectory evolution (jump times, jump targets, Brownian increments).
    Path = 0,
    /// The exponential clock variable T of the randomized hitting time.
    Clock = 1,
}

const ROLES: u64 = 4;

/// Substream for `(master_seed, path_index, role)`.
pub fn substream(master_seed: u64, path_index: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index * ROLES + role as u64);
    rng
}

/// Exponential(rate) draw by inversion; deterministic given the stream.
pub fn exp_draw<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    // gen::<f64>() is uniform on [0,1); 1-u avoids ln(0).
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}
