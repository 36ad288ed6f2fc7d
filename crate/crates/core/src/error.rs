use thiserror::Error;

/// Errors raised by the homogenization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(
        "relaxation error: {message} (fitted decay rate {gamma:.3e}, suggested relax time {suggested_relax:.1})"
    )]
    Relaxation {
        message: String,
        gamma: f64,
        suggested_relax: f64,
    },
    #[error("inconsistency: {0}")]
    Inconsistency(String),
    #[error("statistical error: {0}")]
    Statistical(String),
    #[error("mixing diagnostic failed: {0}")]
    Mixing(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 1,
            Error::Io(_) | Error::Json(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn dimension<S: Into<String>>(msg: S) -> Error {
    Error::Dimension(msg.into())
}
