use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    /// Input for which the requested quantity is undefined (all-zero
    /// precoders, zero matrices that must be inverted, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite in {0}")]
    NotPositiveDefinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
