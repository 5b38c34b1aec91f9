use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown tag `{0}` in validity rule")]
    UnknownTag(String),

    #[error("unsupported named objective `{name}`; supported: {supported}")]
    UnknownObjective { name: String, supported: String },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("dataset has a single class; at least two are required")]
    SingleClass,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("data source does not match objective {descriptor}: {reason}")]
    SourceMismatch { descriptor: usize, reason: String },

    #[error("no head registered for output kind {0}")]
    MissingHead(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss for objective {descriptor}")]
    NonFiniteLoss { descriptor: usize },

    #[error("backward called twice on the same tape")]
    DoubleBackward,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("parameters diverged to non-finite values at step {step}")]
    Diverged { step: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
