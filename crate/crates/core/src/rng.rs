//! Named deterministic random streams.
//!
//! Each consumer gets its own ChaCha8 generator whose 32-byte seed is
//! `SHA-256(seed.to_le_bytes() || name)`. Streams are independent of each
//! other and of creation order, so adding a new consumer never shifts the
//! numbers an existing one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type RngStream = ChaCha8Rng;

pub const ENV_STREAM: &str = "env";
pub const SAMPLER_STREAM: &str = "sampler";
pub const LEARNER_INIT_STREAM: &str = "learner-init";
pub const EXPLORATION_STREAM: &str = "exploration";
pub const WORKLOAD_STREAM: &str = "workload";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> RngStream {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    /// Stream for evaluation episode `episode` of the checkpoint taken at `step`.
    pub fn eval_stream(&self, step: u64, episode: usize) -> RngStream {
        self.stream(&format!("eval/{step}/{episode}"))
    }
}
