use thiserror::Error;

/// Errors produced by construction, evaluation, and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("unstable system: {0}")]
    Unstable(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
