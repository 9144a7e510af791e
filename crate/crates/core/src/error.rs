use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} exceeds the limit of {limit} ({context})")]
    DimensionTooLarge {
        dim: usize,
        limit: usize,
        context: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown level label {label} on ion {ion}")]
    UnknownLevel { label: u8, ion: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The integrator stopped because an invariant broke (trace drift,
    /// norm drift, non-finite entries).
    #[error("integration aborted at t = {time}: {reason}")]
    IntegrationAborted { time: f64, reason: String },

    #[error("{path}: {reason}")]
    Config { path: String, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// numerical failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::UnknownLevel { .. }
            | Error::InvalidArgument(_)
            | Error::DimensionTooLarge { .. }
            | Error::DimensionMismatch(_) => 1,
            Error::IntegrationAborted { .. } | Error::InvalidState(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}
