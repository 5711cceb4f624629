use thiserror::Error;

/// Errors produced by the memory engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    /// A provider replied, but the reply could not be interpreted.
    #[error("could not parse provider reply {raw:?}: {reason}")]
    Parse { raw: String, reason: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("store consistency violated: {0}")]
    Consistency(String),

    #[error("session lifecycle: {0}")]
    Lifecycle(String),

    /// Malformed persisted data, with the 1-based line number.
    #[error("{path}:{line}: {reason}")]
    Persistence {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
