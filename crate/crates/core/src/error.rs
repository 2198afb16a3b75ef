use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or file layout is invalid. `path` is the key path
    /// (e.g. `train.base_lr`) or filesystem location the message refers to.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("cannot parse file name `{}`: {reason}", file.display())]
    FileName { file: PathBuf, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {term} loss at iteration {iteration}: {value}")]
    NonFinite {
        term: String,
        iteration: usize,
        value: f64,
    },

    #[error("invalid container `{}`: {reason}", path.display())]
    Container { path: PathBuf, reason: String },

    #[error("i/o error on `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on `{}`: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (bad config, bad layout), as
    /// opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::FileName { .. } | Error::Precondition(_)
        )
    }
}
