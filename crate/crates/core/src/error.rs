use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the crate.
///
/// The variants follow the failure classes the command-line layer maps onto
/// exit codes: structural/input/contract/config problems are usage errors,
/// integrity problems concern persisted artifacts, training faults are runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or references that do not line up (pose vs skeleton, mapping coverage, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Values that are not usable (non-finite numbers, malformed records).
    #[error("input error: {0}")]
    Input(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("artifact integrity error: {0}")]
    Integrity(String),

    #[error("training fault: {0}")]
    TrainingFault(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
