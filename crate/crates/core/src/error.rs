use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum DreamError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix lost positive definiteness ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("no records to estimate from")]
    EmptyRecords,

    #[error("dataset exhausted after {0} draws")]
    DatasetExhausted(usize),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("oracle quantity unavailable for this environment")]
    OracleUnavailable,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DreamError {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        DreamError::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DreamError>;
