//! Counter-based seeding.
//!
//! Every random draw in the crate is keyed by `(seed, stream, counter)` so a
//! given step's noise does not depend on how many draws happened before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and a list of counters.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn rng_for(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Seeded source of standard-normal blocks, addressable by step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
}

impl NoiseStream {
    const TAG: u64 = 0x006e_6f69_7365;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// `len` standard-normal values for counter `step`.
    pub fn gaussian(&self, step: u64, len: usize) -> Vec<f64> {
        let mut rng = rng_for(self.seed, &[Self::TAG, step]);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}
