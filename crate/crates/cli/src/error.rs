use std::path::PathBuf;

use schemind_core::ingest::IngestError;
use schemind_core::StageError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing artifact {}; run the earlier stage first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{path}: {reason}")]
    BadArtifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingArtifact(_) => EXIT_USAGE,
            CliError::Stage(StageError::Ingest(
                IngestError::NoExamples | IngestError::MissingGoal | IngestError::FileNotFound(_),
            )) => EXIT_USAGE,
            CliError::Stage(e) if e.is_transport() => EXIT_TRANSPORT,
            CliError::Stage(_) | CliError::BadArtifact { .. } => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_VALIDATION,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
