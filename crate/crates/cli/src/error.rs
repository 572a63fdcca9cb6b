use std::fmt::Display;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or constants file; exit 2.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numeric or I/O failure while running; exit 1.
    #[error("runtime error: {0}")]
    Runtime(String),
    /// No feasible step-size schedule; exit 3.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// One or more verification checks failed; exit 1.
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::ChecksFailed { .. } => 1,
            CliError::Infeasible(_) => 3,
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

impl From<geopg::Error> for CliError {
    fn from(e: geopg::Error) -> Self {
        match e {
            geopg::Error::Config(_) | geopg::Error::Parameter(_) => CliError::Usage(e.to_string()),
            geopg::Error::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
