//! Confidence estimation for recognition hypotheses: per-word correctness,
//! inter-word deletion counts and utterance-level confidence, learned jointly
//! by a small transformer over word-pieces and acoustic frames.

pub mod alignment;
pub mod cem;
pub mod checkpoint;
pub mod corpus;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use alignment::{AlignmentLabels, EditCounts, Tag, WordBoundaries};
pub use cem::{
    CemConfig, CemModel, CemOutput, ConfidenceSummary, ModelConfig, TrainConfig, Variant,
};
pub use corpus::{Hypothesis, Utterance};
pub use error::{AlignError, CemError, CheckpointError, DataError, MetricsError, TensorError};
pub use graph::{Graph, Var};
pub use tensor::{Parameters, Tensor};
