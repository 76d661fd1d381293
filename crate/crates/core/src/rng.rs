//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng` keyed
//! by a 64-bit seed mixed with stream tags, so independent consumers never
//! share state and reruns are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn rng(seed: u64, tags: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

/// Well-known stream tags.
pub mod stream {
    pub const PRIOR_SAMPLE: u64 = 1;
    pub const ENV_THETA: u64 = 2;
    pub const ENV_NOISE: u64 = 3;
    pub const PSI_DRAW: u64 = 4;
    pub const SELECT_DRAW: u64 = 5;
    pub const FRESH_NORMAL: u64 = 6;
    pub const TILT_INNER: u64 = 7;
    pub const DIRECTIONS: u64 = 8;
    pub const AUDIT: u64 = 9;
    pub const LEMMA: u64 = 10;
    pub const REPLICATE: u64 = 11;
    pub const CLOUD: u64 = 12;
}
