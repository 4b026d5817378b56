//! Seed derivation for independent RNG streams.

use sha2::{Digest, Sha256};

/// Derive a sub-seed from a root seed and a textual tag.
///
/// Each stochastic component of a run (splits, per-(subject, class) GAN
/// training, classifier init, sampling noise) draws from its own stream so
/// that adding or removing one component never shifts another. The mapping is
/// stable across platforms and releases of the `rand` ecosystem.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
