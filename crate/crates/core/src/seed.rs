//! Deterministic seed derivation.
//!
//! Experiments form a tree: a master seed spawns per-repetition seeds,
//! which spawn per-rollout and per-fit seeds. Children are derived with a
//! counter-based mix so that sibling streams are independent and the whole
//! tree is reproducible from the master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period bijective mixing of a 64-bit word.
#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream index.
#[inline]
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream))
}

/// Two-level derivation, `derive(derive(parent, a), b)`.
#[inline]
pub fn derive2(parent: u64, a: u64, b: u64) -> u64 {
    derive(derive(parent, a), b)
}

/// The RNG used throughout the crate, constructed from a derived seed.
#[inline]
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
