//! Multi-agent experience replay with cache-locality-aware prioritized
//! sampling.
//!
//! A fraction `α` of every mini-batch is drawn from a cached set of the
//! highest-weight transitions that is only re-ranked once every `⌊d/b⌋`
//! batches; the rest is sampled uniformly from the remaining buffer. Weights
//! come from the optimal multi-agent prioritization rule in
//! [`prioritization`]. The crate also contains a small predator-prey task, a
//! value-decomposition learner, and a trace-driven cache model used to
//! measure the locality of each sampling mode.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to one width.

pub mod config;
pub mod env;
pub mod learner;
pub mod locality;
pub mod prioritization;
pub mod replay;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod trace;

pub use config::{validate_config, ConfigError, MixerKind, RawConfig, RunConfig, SamplerMode};
pub use env::{ActionId, EnvState, Observation, PredatorPrey};
pub use learner::train::{train_run, CurveRow, RunArtifacts};
pub use learner::{LearnerError, LearnerParams};
pub use locality::{CacheConfig, LocalityReport};
pub use replay::{ReplayBuffer, Transition, WeightTable};
pub use rng::RngStreams;
pub use sampler::{SampleBatch, Sampler};
pub use scalar::Scalar;
pub use trace::AccessTrace;

pub type Transition32 = Transition<f32>;
pub type Transition64 = Transition<f64>;
pub type ReplayBuffer32 = ReplayBuffer<f32>;
pub type ReplayBuffer64 = ReplayBuffer<f64>;
pub type WeightTable32 = WeightTable<f32>;
pub type WeightTable64 = WeightTable<f64>;
pub type LearnerParams32 = LearnerParams<f32>;
pub type LearnerParams64 = LearnerParams<f64>;
pub type RunArtifacts32 = RunArtifacts<f32>;
pub type RunArtifacts64 = RunArtifacts<f64>;
