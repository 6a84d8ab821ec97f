use thiserror::Error;

/// Errors produced by the locomotion core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("backward called without a cached forward pass")]
    NoForwardCache,

    #[error("non-finite gradient at parameter {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("operation not supported: {0}")]
    Unsupported(&'static str),

    #[error("no dynamics learned for primitive {0}")]
    UnseenPrimitive(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("training aborted: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;
