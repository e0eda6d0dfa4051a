use thiserror::Error;

use crate::ppr::QualificationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied a value outside the operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A policy or peer produced something the game protocol does not allow.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expert snapshot failed qualification ({} of {} wins, mean duration {:.2} s)",
        .0.wins, .0.games, .0.mean_duration)]
    Qualification(Box<QualificationRecord>),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
