//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SptError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SptError>;

impl SptError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SptError::InvalidArgument(msg.into())
    }
}
