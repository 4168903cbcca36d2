//! Reproducible random substreams.
//!
//! A stream is identified by a root seed plus a path of `(tag, index)`
//! labels. The generator seed is a SHA-256 digest of that identity, so a
//! child stream depends only on its label path and never on how much of the
//! parent has been consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    label_path: Vec<(String, u64)>,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn root(seed: u64) -> Self {
        Self::from_identity(seed, Vec::new())
    }

    /// Child stream labelled `(tag, index)` under this stream's path.
    pub fn substream(&self, tag: &str, index: u64) -> Self {
        assert!(!tag.is_empty(), "substream tag must be nonempty");
        let mut path = self.label_path.clone();
        path.push((tag.to_owned(), index));
        Self::from_identity(self.root_seed, path)
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn label_path(&self) -> &[(String, u64)] {
        &self.label_path
    }

    fn from_identity(root_seed: u64, label_path: Vec<(String, u64)>) -> Self {
        let mut h = Sha256::new();
        h.update(b"metamem-rng-v1");
        h.update(root_seed.to_le_bytes());
        for (tag, idx) in &label_path {
            h.update((tag.len() as u64).to_le_bytes());
            h.update(tag.as_bytes());
            h.update(idx.to_le_bytes());
        }
        let seed: [u8; 32] = h.finalize().into();
        Self {
            root_seed,
            label_path,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Stream for a per-task data batch: `(role, task)` then `(step, step)`.
///
/// Centralized iteration `t` and federated local step `(r-1)*H + (h-1)` share
/// this key scheme, which is what makes the `H = 1` federated round replay a
/// centralized step exactly.
pub fn data_stream(run: &RngStream, role: &str, task: usize, step: u64) -> RngStream {
    run.substream(role, task as u64).substream("step", step)
}
