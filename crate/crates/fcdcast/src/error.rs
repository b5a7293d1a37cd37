//! Error taxonomy shared by every module.
//!
//! The CLI maps error classes onto exit codes: user-correctable problems
//! (bad inputs, bad configs, missing files) exit with 1, internal failures
//! (shape bugs, non-finite losses) exit with 2.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Structurally malformed input (index out of range, bad magic bytes).
    #[error("structural error: {0}")]
    Structure(String),

    /// Bad configuration file or flag combination.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes are incompatible; indicates a wiring bug.
    #[error("shape error: {0}")]
    Shape(String),

    /// Training loss left the finite range; state is dumped for post-mortem.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Unparseable artifact (CSV, JSON, binary cache).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Process exit code for the CLI: 1 for user errors, 2 for internal ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Structure(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Format(_) => 1,
            Error::Shape(_) | Error::NonFiniteLoss { .. } => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
