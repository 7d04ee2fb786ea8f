use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}:{column}: config syntax error: {message}")]
    ConfigSyntax {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value {value} in loss term `{term}`")]
    Numeric { term: &'static str, value: f64 },

    #[error("unpaired file {}: no partner in the `{missing}` domain", .orphan.display())]
    Pairing { orphan: PathBuf, missing: &'static str },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("incompatible checkpoint at {}: {reason}", .path.display())]
    Incompatible { path: PathBuf, reason: String },

    #[error("pair `{id}`: {source}")]
    Pair {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("preset `{preset}`: {source}")]
    Preset {
        preset: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} inputs failed")]
    PartialFailure { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
