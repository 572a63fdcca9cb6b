use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the estimation and optimization stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A computation produced or consumed a non-finite value, or a solve failed.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An action with zero probability was scored.
    #[error("domain error: {0}")]
    Domain(String),
    /// The policy does not provide the requested derivative.
    #[error("capability error: {0}")]
    Capability(String),
    /// No step-size schedule satisfies the requested constraints.
    #[error("infeasible schedule: {reason}")]
    Infeasible { reason: String, report: Option<Box<crate::optim::MrpgSchedule>> },
    /// Malformed configuration or fixture document.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(msg: impl fmt::Display) -> Self {
        Error::Parameter(msg.to_string())
    }

    pub(crate) fn numeric(msg: impl fmt::Display) -> Self {
        Error::Numeric(msg.to_string())
    }
}

/// Fails with a numeric error when `x` is not finite.
pub(crate) fn ensure_finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::numeric(format!("{what} is not finite ({x})")))
    }
}
