//! Streaming test-time adaptation over precomputed embeddings: a class-aware
//! visual prototype cache with frequency-scaled capacities and rejuvenation
//! boosts, hard-negative contrastive refinement of textual prototypes, and a
//! fused cache + textual prediction head.
//!
//! The crate is organized around the pipeline's stages:
//! - [`numerics`]: normalization, cosine, softmax, entropy.
//! - [`config`]: every hyperparameter, validated.
//! - [`cache`]: the per-class bounded prototype cache and its capacity law.
//! - [`ncl`]: hard-negative mining and the contrastive penalty.
//! - [`objective`]: the composite loss, analytic gradients, optimizer.
//! - [`engine`]: the per-sample adaptation loop and session fold.
//! - [`harness`]: synthetic long-tail streams and ablation grids.
//! - [`io`]: file formats, config loading, report emission.

pub mod cache;
pub mod config;
pub mod engine;
pub mod harness;
pub mod io;
pub mod ncl;
pub mod numerics;
pub mod objective;

pub use cache::{AdmitOutcome, CapacityDecision, PrototypeCache};
pub use config::{AugPrediction, FrequencyMode, HyperParams};
pub use engine::{run_session, Session, SessionOutcome, StreamRecord};
pub use harness::{generate_stream, run_ablation, AblationArm, SyntheticSpec};
pub use numerics::{EmbeddingVector, ProbabilityVector};
pub use objective::TextualPrototypeSet;
