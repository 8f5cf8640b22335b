//! Seeded randomness.
//!
//! All randomness goes through ChaCha8 seeded with `seed_from_u64`, so
//! generated data is identical on every platform. Per-sample streams use
//! `base ^ index` as their seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type OdfRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> OdfRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for sample `index` derived from `base`.
pub fn derived(base: u64, index: u64) -> OdfRng {
    seeded(base ^ index)
}
