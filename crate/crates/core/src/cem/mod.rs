//! The confidence model: configuration, forward pass, losses, utterance
//! estimates, training, evaluation and rescoring.

pub mod config;
pub mod eval;
pub mod loss;
pub mod model;
pub mod rescore;
pub mod summary;
pub mod train;

pub use config::{CemConfig, DataSection, ModelConfig, TrainConfig, Variant};
pub use eval::{evaluate, EvalError, Scorer};
pub use loss::{deletion_loss, total_loss, utterance_loss, word_loss, LossParts};
pub use model::{CemInput, CemModel, CemOutput, CheckpointHeader};
pub use rescore::{rescore_corpus, rescore_nbest, rescore_oracle, RescoreReport, RescoreScore};
pub use summary::{estimate_summary, ConfidenceSummary};
pub use train::{build_examples, train, EpochLog, Example, TrainOutcome};
