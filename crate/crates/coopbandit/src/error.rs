//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (bad graph parameters, invalid
    /// agent id, non-finite input, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The message protocol was violated (round mismatch, missing relay
    /// history); indicates a bug in the round engine rather than bad input.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A root-find or iterative method failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An independent oracle failed to certify its own result.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Experiment configuration rejected during validation.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
