//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one 64-bit seed. Stages and parallel
//! work items derive their own seeds with [`derive_seed`] so that partial
//! re-runs and parallel schedules stay reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `(seed, tag)`.
///
/// Uses SHA-256 so the mapping is stable across platforms and releases.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Seeded RNG for one work item of an indexed parallel loop.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed.wrapping_add(
        index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )))
}

/// SplitMix64 finalizer; spreads structured seeds over the u64 range.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
