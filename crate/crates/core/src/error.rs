use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Validation failures and simulation faults map onto distinct CLI exit codes,
/// so callers that care should match on the variant rather than the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown model preset `{name}` (available: {})", available.join(", "))]
    UnknownModel {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("simulation error at step {step}, particle {particle}: {reason}")]
    Simulation {
        step: usize,
        particle: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
