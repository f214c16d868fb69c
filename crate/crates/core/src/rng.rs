//! Deterministic randomness: every sampler derives its own stream from the
//! master seed and a purpose label, so adding or reordering samplers never
//! shifts another sampler's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child RNG from `seed` and a purpose label via an FNV-1a fold.
pub fn labeled_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(h)
}
