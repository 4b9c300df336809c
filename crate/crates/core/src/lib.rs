//! Attention-only decoder laboratory for controlled dataset-scaling studies.
//!
//! The crate covers the full pipeline: byte-level BPE tokenization, corpus
//! chunking into fixed-length padded shards, nested power-of-two training
//! subsets, subset-representativeness analytics, a single-block attention-only
//! decoder with frozen embeddings and hand-written gradients, AdamW, the
//! training/evaluation harness, and the Kaplan joint scaling law.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod scaling;
pub mod subsets;
pub mod tokenizer;

pub use analysis::{SeedRunStats, TokenDistribution};
pub use corpus::{SequenceRecord, TokenShard};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, MetricsRow, Regime, SubsetSpec};
pub use model::{AttentionParams, FrozenParts, ModelConfig};
pub use numerics::{Mask, Matrix, Scalar};
pub use optim::{AdamWConfig, AdamWState};
pub use scaling::ScalingConstants;
pub use subsets::SubsetPlan;
pub use tokenizer::{BpeVocab, TokenId};
