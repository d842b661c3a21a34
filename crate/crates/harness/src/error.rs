use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("incompatible config: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Numerical(#[from] msip_core::Error),

    #[error("every trial failed; first error: {0}")]
    AllTrialsFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("plots need a 2-dimensional configuration, got dimension {0}")]
    UnsupportedDimension(usize),

    #[error("malformed result file {path}: {message}")]
    Results { path: PathBuf, message: String },
}

impl HarnessError {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for configuration and input problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numerical(_) | Self::AllTrialsFailed(_) => 2,
            Self::Config { .. } | Self::Incompatible(_) | Self::Io { .. } | Self::Results { .. } => 1,
            Self::UnsupportedDimension(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
