//! Seed derivation.
//!
//! Every randomized operation in this crate takes an explicit 64-bit seed, and
//! nested structure (trial, cluster, step) derives child seeds through a
//! splitmix chain so that runs are reproducible and independent trials can be
//! dispatched in any order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates consecutive or structured inputs.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a path of stream identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p));
    }
    s
}

/// Deterministic RNG for a derived stream.
pub fn rng_at(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Deterministic RNG directly from a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
