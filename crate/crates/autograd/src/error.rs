use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, AutogradError>;
