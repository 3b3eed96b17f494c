use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-facing parameter (negative kappa, d < 3 where transience is needed, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A size or truncation guard was violated.
    #[error("guard violation: {0}")]
    Guard(String),

    #[error("walk exceeded the hard step cap of {0} steps")]
    StepCap(u64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("soup exceeded its total-length budget of {0} sites")]
    LengthBudget(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Guard,
    Runtime,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::Parse(_) => ErrorClass::Config,
            Error::Guard(_) | Error::LengthBudget(_) => ErrorClass::Guard,
            _ => ErrorClass::Runtime,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn guard(msg: impl Into<String>) -> Error {
    Error::Guard(msg.into())
}
