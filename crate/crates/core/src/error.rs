use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record file failed validation. `row` is 1-based and counts data rows
    /// (the header is row 0).
    #[error("{path}: row {row}, field `{field}`: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid record `{patient_id}`: {message}")]
    InvalidRecord { patient_id: String, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("JSON error on {path}: {source}")]
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
}
