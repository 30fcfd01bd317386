use kglab::KgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(KgError),

    #[error("{failed} validation check(s) failed")]
    Validation { failed: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), reason: reason.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::Validation { .. } => 4,
        }
    }
}

/// Parameter and precondition errors are configuration errors; everything
/// else the library raises is numerical.
impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::InvalidParameter { key, reason } => CliError::Config { key, reason },
            KgError::Precondition(reason) | KgError::Domain(reason) | KgError::Coverage(reason) => {
                CliError::Config { key: "config".into(), reason }
            }
            KgError::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other),
        }
    }
}

/// Like the `From` conversion, but attributes precondition failures to `key`.
pub fn keyed(key: &'static str) -> impl FnOnce(KgError) -> CliError {
    move |e| match e {
        KgError::Precondition(reason) | KgError::Domain(reason) | KgError::Coverage(reason) => CliError::config(key, reason),
        other => other.into(),
    }
}
