use thiserror::Error;

/// Errors raised by the design and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The minimum eigenvalue is still nonnegative at the upper end of the
    /// bracket; the caller should widen it.
    #[error("bisection bracket too narrow: min eigenvalue {min_eig:.3e} still >= 0 at t_hi = {t_hi:.6e}")]
    BracketTooNarrow { t_hi: f64, min_eig: f64 },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("instance too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
