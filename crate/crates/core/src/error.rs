use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("invalid action {action} on screen {screen}: {reason}")]
    InvalidAction {
        screen: String,
        action: String,
        reason: String,
    },

    #[error("suite definition error: {0}")]
    Suite(String),

    #[error("critic gate rejected record `{id}`: score {score} below threshold {threshold}")]
    GateRejected {
        id: String,
        score: u8,
        threshold: u8,
    },

    #[error("retrieval index is stale: {0}")]
    StaleIndex(String),

    #[error("{path}: line {line}: {message}")]
    CorruptLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
