//! Derivation of named rng sub-streams from one base seed.
//!
//! Each pipeline stage (splitting, initialization, sweeps, classifier)
//! gets its own stream so adding draws to one stage never shifts the
//! others.

use sha2::{Digest, Sha256};

/// Derives a child seed from `base` and a stream name: the first eight
/// bytes, little-endian, of SHA-256 over the little-endian base followed
/// by the name bytes.
pub fn stream_seed(base: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
