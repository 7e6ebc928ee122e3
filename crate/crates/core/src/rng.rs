//! Deterministic substream derivation for every resampling loop.
//!
//! A substream is a ChaCha8 generator whose 256-bit seed is the SHA-256 of
//! `(master seed, task label, iteration index)`. Draws for a given triple do
//! not depend on scheduling, so parallel loops reproduce serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn substream(&self, task: &str, i: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        h.update((task.len() as u64).to_le_bytes());
        h.update(task.as_bytes());
        h.update(i.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// A child spec whose own substreams are disjoint from the parent's.
    pub fn derive(&self, task: &str, i: u64) -> RngSpec {
        use rand::RngCore;
        RngSpec::new(self.substream(task, i).next_u64())
    }
}
