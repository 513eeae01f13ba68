//! Named random sub-streams derived from one root seed.
//!
//! Every stochastic stage draws from a stream keyed by `(root, name, index)`,
//! so stages reproduce independently of each other and of worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SvcRng = ChaCha8Rng;

pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Stream `name` (optionally indexed, e.g. by training step) under `root`.
pub fn stream(root: u64, name: &str, index: u64) -> SvcRng {
    SvcRng::seed_from_u64(derive_seed(root, name, index))
}
