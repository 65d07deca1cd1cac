//! Schema induction from example sets.
//!
//! The pipeline groups examples into clusters, abstracts each cluster into
//! a schema of dimensions and attributes backed by evidence matrices, and
//! refines schemas by contrasting generated outputs with held-out examples.
//! Every model call goes through [`gateway::Gateway`].

pub mod abstraction;
pub mod clustering;
pub mod diff;
mod error;
pub mod evidence;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod pipeline;
mod prompting;
pub mod refinement;
pub mod testkit;
pub mod text;

pub use diff::{apply_diff, diff_revisions, RevisionDiff};
pub use error::StageError;
pub use evidence::{
    check_partition, check_segment_map, check_support, find_verbatim, NormalizationPolicy, PartitionViolation,
    SegmentViolation,
};
pub use gateway::{Gateway, GatewayError, ModelParams, TemplateId, TranscriptMode};
pub use model::*;
