use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no word is shared by every period")]
    EmptySharedVocab,
    #[error("need {requested} words but only {available} are shared")]
    InsufficientVocab { requested: usize, available: usize },
    #[error("sample too small: need at least {required} rows per side, got {n_x} and {n_y}")]
    SampleTooSmall { required: usize, n_x: usize, n_y: usize },
    #[error("ratio statistic is at or below the log floor; gradient is not finite")]
    NonFiniteGradient,
    #[error("no (lambda, fold) run reached a positive validation ratio")]
    AllRunsRejected,
    #[error("selected variable set is empty; the permutation test is undefined")]
    EmptySelection,
    #[error("word not found: {0}")]
    WordNotFound(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
