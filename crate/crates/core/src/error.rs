use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Design matrix lost rank; carries the names of the predictors that
    /// could not be resolved.
    #[error("singular fit: collinear predictors {0:?}")]
    Singular(Vec<String>),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for I/O and configuration problems, 2 for
    /// numerical or experiment failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Csv { .. }
            | Error::Json { .. }
            | Error::Config(_)
            | Error::Argument(_) => 1,
            Error::Domain(_) | Error::Singular(_) | Error::Experiment(_) => 2,
        }
    }
}
