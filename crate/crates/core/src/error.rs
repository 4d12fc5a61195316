use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, strides or hyperparameters that cannot describe a valid computation.
    #[error("configuration error: {0}")]
    Config(String),
    /// A call that violates an API precondition (wrong rank, non-scalar loss, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// Values outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// NaN/Inf produced during training or inference.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
