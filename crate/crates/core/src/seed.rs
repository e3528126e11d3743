//! Seeded RNG streams.
//!
//! Every stochastic draw in the pipeline comes from a ChaCha stream keyed by
//! a master seed, a domain tag and an index path, so results never depend on
//! iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_rng(master: u64, domain: &str, path: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child seed (for example a per-frame scene seed) from a master seed.
pub fn derive_seed(master: u64, domain: &str, path: &[u64]) -> u64 {
    use rand::RngCore;
    derive_rng(master, domain, path).next_u64()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
