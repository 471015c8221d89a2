//! Error types shared across the simulator.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem in a configuration value (dimension mismatch,
    /// infeasible partition request, missing proximal anchor, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller passed data that violates an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input is formally valid but carries no information to act on
    /// (all-zero sample counts, empty ground truth, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Client/server exchange is inconsistent (weights and updates disagree).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A numeric quantity left the finite range.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A named configuration key failed validation.
    #[error("validation error at `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Prefix the message with location context (fold, round, client),
    /// leaving structured variants untouched.
    pub fn with_context(self, context: impl Into<String>) -> Self {
        let context = context.into();
        match self {
            Error::Config(msg) => Error::Config(format!("{context}: {msg}")),
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{context}: {msg}")),
            Error::DegenerateInput(msg) => Error::DegenerateInput(format!("{context}: {msg}")),
            Error::Protocol(msg) => Error::Protocol(format!("{context}: {msg}")),
            Error::Numerical(msg) => Error::Numerical(format!("{context}: {msg}")),
            other => other,
        }
    }
}
