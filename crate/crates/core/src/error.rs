use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A covariance matrix could not be factorized.
    #[error("numerical failure in {context}: pivot {pivot} is {value:e} after jitter {jitter:e}")]
    NumericalFailure {
        context: String,
        pivot: usize,
        value: f64,
        jitter: f64,
    },

    #[error("config error at {location}: key `{key}`: {message}")]
    Config {
        key: String,
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_epoch(self, epoch: usize) -> Self {
        Error::Epoch {
            epoch,
            source: Box::new(self),
        }
    }
}
