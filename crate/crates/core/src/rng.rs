//! Seeded random streams.
//!
//! Every stochastic routine takes a caller-supplied generator. Independent
//! replicates draw from `stream(seed, index)`: the same ChaCha key with a
//! distinct stream id, so replicate `b` sees the same numbers no matter how
//! many replicates run or in what order they are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

pub fn seeded(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed (splitmix64 finalizer) for nested experiments.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
