//! Counter-based seed derivation.
//!
//! Every random stream in a calibration is keyed by a 64-bit value derived
//! from the master seed and a path of counters (run index, iteration, ...).
//! Streams never depend on scheduling, so results are identical for any
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child key from `parent` and a path of counters.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(parent ^ GOLDEN), |acc, &c| {
        mix64(acc.wrapping_add(GOLDEN).wrapping_add(mix64(c.wrapping_add(GOLDEN))))
    })
}

/// Generator for replication `index` under `key`. Replications use distinct
/// ChaCha streams of the same key.
pub fn replication_rng(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Plain generator for a key.
pub fn rng(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Stream tags used across the crate so that independent purposes never share
/// a key.
pub mod tag {
    pub const TARGET_DATA: u64 = 1;
    pub const CONTAMINATION: u64 = 2;
    pub const SGD_ITERATION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CONFIDENCE: u64 = 5;
    pub const RUN: u64 = 6;
    pub const OPTIMUM: u64 = 7;
}
