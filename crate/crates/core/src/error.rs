use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed triple, expected 3 tab-separated fields, found {fields}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        fields: usize,
    },

    #[error("cannot build a vocabulary from an empty training split")]
    EmptyVocabulary,

    #[error("{kind} {name:?} is not in the training vocabulary")]
    OutOfVocabulary { kind: &'static str, name: String },

    #[error("relation id {id} is not below {limit}; reciprocal relations already present?")]
    AlreadyAugmented { id: u32, limit: u32 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Usage(String),

    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("activation input must be nonnegative, got {0}")]
    NegativeActivationInput(f64),

    #[error("log-sum-exp of an empty vector")]
    EmptyScores,

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("score row has {found} entries, expected {expected}")]
    RowLength { expected: usize, found: usize },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("time budget of {budget:.3}s is smaller than one training step ({step:.3}s)")]
    BudgetTooSmall { budget: f64, step: f64 },

    #[error("cannot evaluate an empty split")]
    EmptySplit,

    #[error("{0}")]
    Format(String),

    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch (file truncated or corrupt)")]
    Checksum,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
