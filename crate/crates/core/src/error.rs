use std::path::PathBuf;

use thiserror::Error;

use crate::solvers::UnfoldedParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged {
        epoch: usize,
        last_good: UnfoldedParams,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("geometry hash mismatch in {path}: expected {expected:016x}, found {found:016x}")]
    HashMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_) | Error::TrainingDiverged { .. } | Error::Resource(_)
        )
    }
}
