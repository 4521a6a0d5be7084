use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A log term hit 0 or 1; contention probabilities must stay strictly inside (0, 1).
    #[error("log singularity: {0}")]
    Singularity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("instance too large for exhaustive search: {size} > {limit}")]
    Size { size: usize, limit: usize },

    #[error("no probability mass on the allowed support")]
    DegenerateSupport,

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
