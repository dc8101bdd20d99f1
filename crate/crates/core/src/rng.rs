//! Deterministic random streams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives an independent sub-seed for the stream named `label`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let digest = Sha256::new()
        .chain_update(master.to_le_bytes())
        .chain_update((label.len() as u32).to_le_bytes())
        .chain_update(label.as_bytes())
        .chain_update(index.to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn stream(master: u64, label: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, label, index))
}
