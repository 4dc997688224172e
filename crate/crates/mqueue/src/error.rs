use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("invalid topic name '{0}'")]
    InvalidTopic(String),
    #[error("invalid group id '{0}'")]
    InvalidGroup(String),
    #[error("group '{group}' is not registered on topic '{topic}'")]
    UnknownGroup { group: String, topic: String },
    #[error("group '{group}' already registered on topic '{topic}'")]
    DuplicateGroup { group: String, topic: String },
    #[error("offset {offset} is beyond head {head}")]
    OffsetBeyondHead { offset: u64, head: u64 },
    #[error("storage full: {used} bytes used of {limit}")]
    StorageFull { used: u64, limit: u64 },
    #[error("corrupt segment {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl QueueError {
    /// True for failures of the storage itself rather than of the request.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self,
            QueueError::StorageFull { .. } | QueueError::Io(_) | QueueError::Corrupt { .. }
        )
    }
}
