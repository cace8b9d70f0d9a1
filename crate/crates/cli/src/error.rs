use thiserror::Error;

/// Failures of a run, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, or parameters rejected by a
    /// precondition check.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation failed: non-finite states, diverged training and the like.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The run completed but a statistical check it reports did not pass.
    #[error("statistical check failed: {0}")]
    Check(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl From<nndiff_core::Error> for CliError {
    fn from(e: nndiff_core::Error) -> Self {
        use nndiff_core::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::InvalidParameter(_)
            | E::UnsupportedPairing { .. }
            | E::UndersizedSample { .. }
            | E::MemoryCap { .. }
            | E::DimensionTooLarge { .. } => CliError::Config(e.to_string()),
            E::NonFinite { .. } | E::Diverged { .. } => CliError::Numeric(e.to_string()),
            E::Io(io) => CliError::Io(io),
            E::Json(j) => CliError::Config(j.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
