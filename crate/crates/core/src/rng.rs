//! Reproducible random streams.
//!
//! Every random quantity is drawn from a ChaCha8 generator keyed by the
//! user seed and a purpose tag, with the replicate (or start, or stage)
//! index selecting the stream. Results therefore do not depend on the
//! order in which parallel work is scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Simulation = 1,
    MonteCarloDraws = 2,
    Initialization = 3,
    Evaluation = 4,
}

/// Generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = seed ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// A fresh 64-bit seed for `(seed, purpose, index)`, for APIs that take a seed.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    stream(seed, purpose, index).next_u64()
}
