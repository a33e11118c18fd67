//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by panel loading, spectral analysis, optimization and
/// backtesting.
#[derive(Debug, Error)]
pub enum Error {
    /// The input file could not be parsed as CSV.
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    /// The input parsed but violated a structural requirement (missing cell,
    /// non-finite value, duplicate date, bad header, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A function argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input is degenerate for the requested operation (e.g. an all-zero
    /// return window has no normalized spectrum).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative solver hit its iteration budget before reaching the
    /// requested tolerance.
    #[error("solver failed to converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
