//! Deterministic, splittable randomness.
//!
//! Every replica draws from a ChaCha stream addressed by (master seed,
//! replica index). Streams are independent by construction, so the schedule
//! of a parallel run has no influence on any sampled value.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for replica `k` of a run seeded with `seed`.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// A sub-stream for a named purpose within a replica, so adding draws to one
/// phase of an experiment does not shift another phase's randomness.
pub fn substream(seed: u64, k: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(purpose + 1)));
    rng.set_stream(k);
    rng
}
