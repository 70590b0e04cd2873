use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A rollout group could not be assembled.
    #[error("invalid group: {0}")]
    Group(String),

    /// An operation received inputs that violate its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A rollout log record could not be parsed.
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}, prompt {prompt_id}: {detail}")]
    NonFinite {
        step: u64,
        prompt_id: String,
        detail: String,
    },

    /// A policy checkpoint is malformed or belongs to another task.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
