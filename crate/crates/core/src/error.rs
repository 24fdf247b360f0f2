use thiserror::Error;

use crate::network::InfeasibilityCertificate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The case references something that does not exist or breaks a type invariant.
    #[error("invalid network case: {0}")]
    Structure(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(InfeasibilityCertificate),

    #[error("solver failure: {message}")]
    SolverFailure { message: String, log: Vec<String> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("vertex enumeration refused: {variables} variables exceed the limit of {limit}")]
    TooLarge { variables: usize, limit: usize },

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn solver(message: impl Into<String>, log: Vec<String>) -> Self {
        Error::SolverFailure {
            message: message.into(),
            log,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
