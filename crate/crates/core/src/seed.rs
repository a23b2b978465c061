//! Deterministic seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 of the little-endian tuple `(master, condition, replication, tag)`,
/// truncated to its first eight bytes.
pub fn derive_seed(master: u64, condition: u64, replication: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(condition.to_le_bytes());
    h.update(replication.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, condition: u64, replication: u64, tag: &str) -> ChaCha8Rng {
    rng_from(derive_seed(master, condition, replication, tag))
}
