//! Deterministic seed fan-out: every component seed is a hash of the parent
//! seed and a label path, so adding a component never shifts another one's
//! stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn derive_indexed(seed: u64, label: &str, index: usize) -> u64 {
    derive(seed, &format!("{label}/{index}"))
}

pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label))
}
