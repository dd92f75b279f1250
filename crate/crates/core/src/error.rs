use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coefficient evaluation failed at t={t}, x={x:?}: {reason}")]
    Evaluation { t: f64, x: Vec<f64>, reason: String },

    #[error("parameter `{name}`: {reason}")]
    Validation { name: String, reason: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("numerical failure: {reason} (achieved {achieved:e})")]
    Numerical { reason: String, achieved: f64 },

    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
