//! Seed derivation. Every random stream in the simulator and trainer is a
//! ChaCha8 generator keyed by a mixed 64-bit seed, so results are stable
//! across platforms and independent of call order between streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with any number of stream coordinates.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags, kept distinct so two subsystems never share a generator.
pub mod tags {
    pub const SPAWN: u64 = 1;
    pub const PRIORITY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const ACTIONS: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const EPISODE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const TEST: u64 = 8;
}
