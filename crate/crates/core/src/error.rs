use thiserror::Error;

use crate::evidence::{EvidenceError, PartitionViolation, SegmentViolation};
use crate::gateway::{GatewayError, TemplateError};
use crate::ingest::IngestError;
use crate::model::{DimensionId, ModelError, SuggestionId};

/// Errors raised by the pipeline stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{stage}: {reason}")]
    ParseFailed { stage: &'static str, reason: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("clusters do not partition the examples: {}", join(.0))]
    PartitionViolation(Vec<PartitionViolation>),
    #[error("matrix {matrix} is missing {} cell(s): {}", .missing.len(), pairs(.missing))]
    IncompleteMatrix {
        matrix: String,
        missing: Vec<(String, String)>,
    },
    #[error("detailed and concise attribute lists differ in length for {0}")]
    ParallelArrayMismatch(String),
    #[error("matrix column {0} does not resolve to a schema element")]
    DanglingColumn(String),
    #[error("unknown cluster {0}")]
    UnknownCluster(String),
    #[error("unknown example {0}")]
    UnknownExample(String),
    #[error("edit changes nothing: {0}")]
    NoOp(String),
    #[error("unknown edit target {0}")]
    UnknownTarget(String),
    #[error("concise label {0:?} already exists in its scope")]
    DuplicateConcise(String),
    #[error("dimension name {0:?} already exists")]
    DuplicateName(String),
    #[error("model returned an empty {0}")]
    EmptyGeneration(String),
    #[error("no value for dimension {0}")]
    MissingDimensionValue(DimensionId),
    #[error("no eligible inputs with an input context")]
    NoEligibleInputs,
    #[error("improvement line has no known tag: {0:?}")]
    UnknownTag(String),
    #[error("suggestion targets unknown dimension {0:?}")]
    UnknownTargetDimension(String),
    #[error("unknown suggestion {0}")]
    UnknownSuggestion(String),
    #[error("suggestion {0} was already reviewed")]
    AlreadyReviewed(SuggestionId),
    #[error("no accepted suggestions to apply")]
    NothingToApply,
    #[error("revised schema does not match the original structure: {0}")]
    StructureMismatch(String),
    #[error("segment map invalid: {}", join(.0))]
    SegmentMap(Vec<SegmentViolation>),
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

fn pairs(items: &[(String, String)]) -> String {
    items
        .iter()
        .map(|(r, c)| format!("{r}/{c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<TemplateError> for StageError {
    fn from(e: TemplateError) -> Self {
        StageError::Gateway(GatewayError::Template(e))
    }
}

impl StageError {
    /// Failures of the endpoint or transcript rather than of model content.
    pub fn is_transport(&self) -> bool {
        match self {
            StageError::Gateway(g) => g.is_transport(),
            _ => false,
        }
    }
}
