use thiserror::Error;

/// Failures raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced non-finite value {value}")]
    NonFinite { op: &'static str, value: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph")]
    GraphConsumed,
    #[error("attention row {row} is fully masked")]
    FullyMasked { row: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("index {index} out of range for {op} (len {len})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("word-piece `{token}` at position 0 lacks the word-start marker `{marker}`")]
    MissingMarker { token: String, marker: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid channel config: {0}")]
    Config(String),
    #[error("cannot tokenize an empty word")]
    EmptyWord,
    #[error("utterance {id}: {detail}")]
    Invalid { id: String, detail: String },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum CemError {
    #[error("empty hypothesis")]
    EmptyHypothesis,
    #[error("no acoustic frames")]
    EmptyAcoustic,
    #[error("config: {0}")]
    Config(String),
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("variant {variant} has no {head} head")]
    MissingHead {
        variant: &'static str,
        head: &'static str,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}, utterance {utterance_id}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        utterance_id: String,
        detail: String,
    },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(
        "metric needs both classes, got {positives} positive and {negatives} negative samples"
    )]
    SingleClass { positives: usize, negatives: usize },
    #[error("no samples")]
    Empty,
    #[error("sample {index}: {detail}")]
    InvalidSample { index: usize, detail: String },
    #[error("variant {variant} lacks score `{score}` required by the priority table")]
    MissingScore {
        variant: &'static str,
        score: &'static str,
    },
}
