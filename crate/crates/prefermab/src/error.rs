use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration key failed validation. The key name is part of the
    /// message so the CLI can point at the offending entry.
    #[error("invalid config: `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Training produced non-finite quantities. Carries enough context to
    /// locate the epoch/step that diverged.
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn divergence(detail: impl Into<String>) -> Self {
        Error::Divergence {
            epoch: 0,
            step: 0,
            detail: detail.into(),
        }
    }

    /// Attach epoch/step context to a divergence error as it propagates out
    /// of the update rules into the training loop.
    pub fn at(self, epoch: usize, step: usize) -> Self {
        match self {
            Error::Divergence { detail, .. } => Error::Divergence {
                epoch,
                step,
                detail,
            },
            other => other,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
