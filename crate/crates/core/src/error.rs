use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum KgError {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "quadrature tolerance not met: estimate {estimate:e}, error bound {error_bound:e}, requested {requested:e}"
    )]
    ToleranceNotMet { estimate: f64, error_bound: f64, requested: f64 },

    #[error("factorization failed after {retries} jitter retries (smallest eigenvalue {min_eigenvalue:e})")]
    Factorization { retries: usize, min_eigenvalue: f64 },

    #[error("grid coverage: {0}")]
    Coverage(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl KgError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        KgError::InvalidParameter { key: key.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, KgError>;
