use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum EetError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("svd did not converge after {sweeps} sweeps")]
    NotConverged { sweeps: usize },

    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{what} out of bounds: {index} >= {bound}")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EetError>;

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> EetError {
    EetError::Shape {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}
