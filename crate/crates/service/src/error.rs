use schemind_core::StageError;
use thiserror::Error;

use crate::events::LogError;
use crate::node::NodeKey;
use crate::state::FoldError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{node} needs {needs} to be done first")]
    DependencyNotMet { node: NodeKey, needs: String },
    #[error("{0} is already running")]
    AlreadyRunning(NodeKey),
    #[error("{0}")]
    Conflict(String),
    #[error("ingest failed: {0}")]
    IngestFailed(StageError),
    #[error(transparent)]
    Stage(StageError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("session state is inconsistent: {0}")]
    Inconsistent(String),
    #[error("{0}")]
    Io(String),
}

impl From<FoldError> for ServiceError {
    fn from(e: FoldError) -> Self {
        match e {
            FoldError::Stage(s) => ServiceError::Stage(s),
            FoldError::Inconsistent(s) => ServiceError::Inconsistent(s),
        }
    }
}

impl ServiceError {
    /// Stable machine-readable name for API bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) | ServiceError::NotFound(_) => "NotFound",
            ServiceError::DependencyNotMet { .. } => "DependencyNotMet",
            ServiceError::AlreadyRunning(_) => "AlreadyRunning",
            ServiceError::Conflict(_) => "Conflict",
            ServiceError::IngestFailed(_) => "IngestFailed",
            ServiceError::Stage(e) if e.is_transport() => "TransportError",
            ServiceError::Stage(_) => "ValidationError",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Log(_) | ServiceError::Inconsistent(_) | ServiceError::Io(_) => "StorageError",
        }
    }
}
