use thiserror::Error;

/// Errors shared across the whole crate.
#[derive(Debug, Error)]
pub enum GlodError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("unknown condition: {0}")]
    UnknownCondition(String),

    #[error("incomplete predictions: {0}")]
    IncompletePredictions(String),

    #[error("numeric divergence at step t={t}: {what}")]
    NumericDivergence { t: usize, what: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GlodError>;

impl GlodError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GlodError::InvalidArgument(msg.into())
    }
}
