use thiserror::Error;

#[derive(Debug, Error)]
pub enum DedispError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("not real-time: {0}")]
    NotRealTime(String),

    #[error("empty configuration space: {0}")]
    EmptySpace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DedispError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> DedispError {
    DedispError::InvalidArgument(msg.into())
}

pub(crate) fn format_err(offset: u64, msg: impl Into<String>) -> DedispError {
    DedispError::Format {
        offset,
        message: msg.into(),
    }
}
