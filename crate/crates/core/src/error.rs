use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::VectorId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data (truncated records, bad headers, ...).
    #[error("malformed data: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// Every centroid was tried and no subset had room for the vector.
    #[error("vector {id} could not be assigned: all distance-eligible subsets are full")]
    AssignmentExhausted { id: VectorId },

    #[error("vector id {id} out of range for dataset of {len} vectors")]
    IdOutOfRange { id: VectorId, len: usize },

    #[error("merge of {members} members needs ~{needed} bytes, budget is {budget}")]
    MemoryBudget {
        members: usize,
        needed: u64,
        budget: u64,
    },

    #[error("instance too large for exhaustive search: {tasks} tasks (limit {limit})")]
    InstanceTooLarge { tasks: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
