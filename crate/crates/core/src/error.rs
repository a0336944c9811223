use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("brute-force oracle limited to {limit} samples, got {len}")]
    OracleSizeExceeded { len: usize, limit: usize },

    #[error("scale {scale} touches the singular cell (minimum resolved scale is {min})")]
    SingularCell { scale: f64, min: f64 },

    #[error("scale out of the resolved range: {0}")]
    OutOfRange(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numeric failure after {iterations} iterations: {detail}")]
    NumericFailure { iterations: usize, detail: String },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
