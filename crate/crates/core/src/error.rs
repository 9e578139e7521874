//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
///
/// The CLI maps these onto exit codes: configuration and format problems are
/// usage errors (exit 1), numeric and training failures are runtime errors
/// (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, shape mismatch, or bad argument.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared during numeric evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training failed (divergent loss, non-finite gradient).
    #[error("training error: {0}")]
    Training(String),

    /// A file did not match its expected binary or text format.
    #[error("format error: {0}")]
    Format(String),

    /// Evaluation could not proceed (e.g. one-class AUROC input).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A scale fit was requested on degenerate data (all-zero errors).
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
