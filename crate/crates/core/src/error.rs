use thiserror::Error;

/// Failure classes. The CLI maps them onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: parameters, shapes, indices, option values.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A numerical procedure did not produce a trustworthy answer.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A physics invariant (trace, Hermiticity, positivity) was breached.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
