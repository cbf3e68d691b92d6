use std::path::PathBuf;

use smgarn_autograd::AutogradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular inversion: {count} pixel(s) have Z*R above 1 - eps")]
    Singularity { count: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("pairing error for sample `{id}`: {reason}")]
    Pairing { id: String, reason: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },
    #[error("unknown variant or grid `{name}`; known grids: {}", known.join("; "))]
    Registry { name: String, known: Vec<String> },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<AutogradError> for Error {
    fn from(e: AutogradError) -> Self {
        match e {
            AutogradError::MissingParam(name) => Error::Checkpoint(format!("parameter `{name}` is missing")),
            other => Error::Dimension(other.to_string()),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
