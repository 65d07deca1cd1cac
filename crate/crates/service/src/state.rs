//! Session state as a pure fold over the event log.

use std::collections::BTreeMap;

use schemind_core::abstraction::{apply_schema_edit, assemble_schema, SchemaEdit, SchemaParts, SupportFinding};
use schemind_core::clustering::{apply_cluster_edit, ClusterEdit};
use schemind_core::evidence::VerificationReport;
use schemind_core::refinement::{review_suggestion, Alignment, ContrastReport, ReviewAction};
use schemind_core::{
    Attribute, Cluster, ClusterId, Clustering, Dimension, DimensionId, EvidenceMatrix, ExampleSet, GenerationRecord,
    RecordId, Schema, SchemaId, StageError, SuggestionId,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;
use crate::node::{NodeKey, NodeStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub holdout_ratio: f64,
    pub seed: u64,
    /// Members sampled per apply.
    pub k: usize,
    pub strict: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            holdout_ratio: 0.2,
            seed: 7,
            k: 2,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringArtifact {
    pub clustering: Clustering,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureArtifact {
    pub matrix: EvidenceMatrix,
    pub report: VerificationReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionsArtifact {
    pub dimensions: Vec<Dimension>,
    pub matrix: EvidenceMatrix,
    pub report: VerificationReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributesArtifact {
    pub attributes: BTreeMap<DimensionId, Vec<Attribute>>,
    pub matrices: BTreeMap<DimensionId, EvidenceMatrix>,
    pub report: VerificationReport,
    pub support: Vec<SupportFinding>,
    pub warnings: Vec<String>,
    /// First attribute ordinal left for the overall attributes.
    pub next_ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallArtifact {
    pub attributes: Vec<Attribute>,
    pub matrix: EvidenceMatrix,
    pub report: VerificationReport,
    pub support: Vec<SupportFinding>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeArtifact {
    Clustering(ClusteringArtifact),
    FeatureMatrix(FeatureArtifact),
    Dimensions(DimensionsArtifact),
    Attributes(AttributesArtifact),
    Overall(OverallArtifact),
    Records { records: Vec<GenerationRecord> },
    Contrast { report: ContrastReport },
    Alignment { alignment: Alignment },
    Revision { schema: Schema, applied: Vec<SuggestionId> },
}

impl NodeArtifact {
    fn fits(&self, node: &NodeKey) -> bool {
        matches!(
            (node, self),
            (NodeKey::Cluster, NodeArtifact::Clustering(_))
                | (NodeKey::FeatureMatrix(_), NodeArtifact::FeatureMatrix(_))
                | (NodeKey::Dimensions(_), NodeArtifact::Dimensions(_))
                | (NodeKey::Attributes(_), NodeArtifact::Attributes(_))
                | (NodeKey::Overall(_), NodeArtifact::Overall(_))
                | (NodeKey::Apply(_), NodeArtifact::Records { .. })
                | (NodeKey::Contrast(_), NodeArtifact::Contrast { .. })
                | (NodeKey::Align(_), NodeArtifact::Alignment { .. })
                | (NodeKey::Iterate(_), NodeArtifact::Revision { .. })
        )
    }
}

/// A user edit, validated by the module that owns the artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum SessionEdit {
    Cluster {
        edit: ClusterEdit,
    },
    /// Applies to the latest revision of the cluster's schema, in place.
    Schema {
        cluster: ClusterId,
        edit: SchemaEdit,
    },
    Review {
        record: RecordId,
        suggestion: SuggestionId,
        #[serde(flatten)]
        action: ReviewAction,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated {
        id: String,
        config: SessionConfig,
        example_set: ExampleSet,
        warnings: Vec<String>,
    },
    NodeStarted {
        node: NodeKey,
    },
    NodeCompleted {
        node: NodeKey,
        artifact: NodeArtifact,
    },
    NodeFailed {
        node: NodeKey,
        error: String,
    },
    /// The process stopped while the node was running.
    NodeInterrupted {
        node: NodeKey,
    },
    EditCommitted {
        edit: SessionEdit,
    },
}

impl EventBody {
    pub fn node(&self) -> Option<&NodeKey> {
        match self {
            EventBody::NodeStarted { node }
            | EventBody::NodeCompleted { node, .. }
            | EventBody::NodeFailed { node, .. }
            | EventBody::NodeInterrupted { node } => Some(node),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionCreated { .. } => "session_created",
            EventBody::NodeStarted { .. } => "node_started",
            EventBody::NodeCompleted { .. } => "node_completed",
            EventBody::NodeFailed { .. } => "node_failed",
            EventBody::NodeInterrupted { .. } => "node_interrupted",
            EventBody::EditCommitted { .. } => "edit_committed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClusterState {
    pub feature_matrix: Option<FeatureArtifact>,
    pub dimensions: Option<DimensionsArtifact>,
    pub attributes: Option<AttributesArtifact>,
    pub overall: Option<OverallArtifact>,
    /// Revision chain, revision 0 first.
    pub revisions: Vec<Schema>,
    /// Suggestions applied to produce each revision after the first.
    pub applied: BTreeMap<SchemaId, Vec<SuggestionId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub id: String,
    pub config: SessionConfig,
    pub example_set: ExampleSet,
    pub warnings: Vec<String>,
    /// Nodes absent from the map are idle.
    pub status: BTreeMap<NodeKey, NodeStatus>,
    pub clustering: Option<ClusteringArtifact>,
    pub clusters: BTreeMap<ClusterId, ClusterState>,
    pub records: BTreeMap<RecordId, GenerationRecord>,
    pub reports: BTreeMap<RecordId, ContrastReport>,
    pub alignments: BTreeMap<RecordId, Alignment>,
}

/// Cluster id of `c1-r0`-style schema ids.
pub fn schema_cluster_id(schema: &str) -> &str {
    schema.rsplit_once("-r").map_or(schema, |(c, _)| c)
}

/// Schema id of `c1-r0.g2`-style record ids.
pub fn record_schema_id(record: &str) -> &str {
    record.rsplit_once(".g").map_or(record, |(s, _)| s)
}

/// Cluster a node belongs to, if any.
pub fn node_cluster(node: &NodeKey) -> Option<&str> {
    match node {
        NodeKey::Cluster => None,
        NodeKey::FeatureMatrix(c) | NodeKey::Dimensions(c) | NodeKey::Attributes(c) | NodeKey::Overall(c) => {
            Some(c.as_str())
        }
        NodeKey::Apply(s) | NodeKey::Iterate(s) => Some(schema_cluster_id(s.as_str())),
        NodeKey::Contrast(r) | NodeKey::Align(r) => Some(schema_cluster_id(record_schema_id(r.as_str()))),
    }
}

fn is_refinement(node: &NodeKey) -> bool {
    matches!(
        node,
        NodeKey::Apply(_) | NodeKey::Contrast(_) | NodeKey::Align(_) | NodeKey::Iterate(_)
    )
}

/// Rebuilds the state from a full log.
pub fn fold(events: &[Event]) -> Result<SessionState, FoldError> {
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| FoldError::Inconsistent("event log is empty".into()))?;
    let mut state = SessionState::genesis(&first.body)?;
    for e in rest {
        state.apply(&e.body)?;
    }
    Ok(state)
}

impl SessionState {
    pub fn genesis(body: &EventBody) -> Result<Self, FoldError> {
        match body {
            EventBody::SessionCreated {
                id,
                config,
                example_set,
                warnings,
            } => Ok(SessionState {
                id: id.clone(),
                config: *config,
                example_set: example_set.clone(),
                warnings: warnings.clone(),
                status: BTreeMap::new(),
                clustering: None,
                clusters: BTreeMap::new(),
                records: BTreeMap::new(),
                reports: BTreeMap::new(),
                alignments: BTreeMap::new(),
            }),
            other => Err(FoldError::Inconsistent(format!(
                "log starts with {} instead of session_created",
                other.kind()
            ))),
        }
    }

    pub fn status(&self, node: &NodeKey) -> NodeStatus {
        self.status.get(node).cloned().unwrap_or(NodeStatus::Idle)
    }

    pub fn is_done(&self, node: &NodeKey) -> bool {
        self.status(node) == NodeStatus::Done
    }

    pub fn running(&self) -> impl Iterator<Item = &NodeKey> {
        self.status
            .iter()
            .filter(|(_, s)| **s == NodeStatus::Running)
            .map(|(k, _)| k)
    }

    pub fn cluster(&self, id: &str) -> Option<&Cluster> {
        self.clustering.as_ref().and_then(|c| c.clustering.cluster(id))
    }

    pub fn schema(&self, id: &str) -> Option<&Schema> {
        self.clusters
            .get(schema_cluster_id(id))
            .and_then(|c| c.revisions.iter().find(|s| s.id.as_str() == id))
    }

    pub fn latest_schema(&self, cluster: &str) -> Option<&Schema> {
        self.clusters.get(cluster).and_then(|c| c.revisions.last())
    }

    pub fn records_of(&self, schema: &str) -> impl Iterator<Item = &GenerationRecord> {
        let schema = schema.to_string();
        self.records.values().filter(move |r| r.schema_id.as_str() == schema)
    }

    /// Applies one event after the first.
    pub fn apply(&mut self, body: &EventBody) -> Result<(), FoldError> {
        match body {
            EventBody::SessionCreated { .. } => {
                return Err(FoldError::Inconsistent("second session_created event".into()));
            }
            EventBody::NodeStarted { node } => {
                if self.status(node) == NodeStatus::Running {
                    return Err(FoldError::Inconsistent(format!("{node} started twice")));
                }
                self.status.insert(node.clone(), NodeStatus::Running);
            }
            EventBody::NodeCompleted { node, artifact } => {
                if self.status(node) != NodeStatus::Running {
                    return Err(FoldError::Inconsistent(format!("{node} completed without starting")));
                }
                if !artifact.fits(node) {
                    return Err(FoldError::Inconsistent(format!(
                        "{node} produced the wrong artifact kind"
                    )));
                }
                self.commit(node, artifact.clone())?;
                self.status.insert(node.clone(), NodeStatus::Done);
            }
            EventBody::NodeFailed { node, error } => {
                self.status.insert(node.clone(), NodeStatus::Failed(error.clone()));
            }
            EventBody::NodeInterrupted { node } => {
                self.status
                    .insert(node.clone(), NodeStatus::Failed("interrupted before completion".into()));
            }
            EventBody::EditCommitted { edit } => self.apply_edit(edit)?,
        }
        Ok(())
    }

    fn cluster_state(&mut self, id: &ClusterId) -> &mut ClusterState {
        self.clusters.entry(id.clone()).or_default()
    }

    fn missing(what: impl std::fmt::Display) -> FoldError {
        FoldError::Inconsistent(format!("{what} does not exist"))
    }

    fn commit(&mut self, node: &NodeKey, artifact: NodeArtifact) -> Result<(), FoldError> {
        match (node, artifact) {
            (NodeKey::Cluster, NodeArtifact::Clustering(a)) => {
                self.status.retain(|k, _| *k == NodeKey::Cluster);
                self.clusters.clear();
                self.records.clear();
                self.reports.clear();
                self.alignments.clear();
                self.clustering = Some(a);
            }
            (NodeKey::FeatureMatrix(c), NodeArtifact::FeatureMatrix(a)) => {
                self.cluster_state(c).feature_matrix = Some(a);
            }
            (NodeKey::Dimensions(c), NodeArtifact::Dimensions(a)) => {
                self.clear_from(c, Stage::Attributes);
                self.cluster_state(c).dimensions = Some(a);
            }
            (NodeKey::Attributes(c), NodeArtifact::Attributes(a)) => {
                self.clear_from(c, Stage::Overall);
                self.cluster_state(c).attributes = Some(a);
            }
            (NodeKey::Overall(c), NodeArtifact::Overall(a)) => {
                self.clear_from(c, Stage::Schema);
                let cluster = self.cluster(c.as_str()).cloned().ok_or_else(|| Self::missing(c))?;
                let cs = self.cluster_state(c);
                let (dims, attrs) = match (&cs.dimensions, &cs.attributes) {
                    (Some(d), Some(a)) => (d.clone(), a.clone()),
                    _ => return Err(FoldError::Inconsistent(format!("{node} committed before its inputs"))),
                };
                let schema = assemble_schema(
                    &cluster,
                    SchemaParts {
                        dimensions: dims.dimensions,
                        dimension_matrix: dims.matrix,
                        attributes: attrs.attributes,
                        attribute_matrices: attrs.matrices,
                        overall_attributes: a.attributes.clone(),
                        overall_matrix: a.matrix.clone(),
                    },
                )?;
                cs.overall = Some(a);
                cs.revisions = vec![schema];
            }
            (NodeKey::Apply(s), NodeArtifact::Records { records }) => {
                if self.schema(s.as_str()).is_none() {
                    return Err(Self::missing(s));
                }
                self.drop_records(|r| record_schema_id(r) == s.as_str());
                for r in records {
                    self.records.insert(r.id.clone(), r);
                }
            }
            (NodeKey::Contrast(r), NodeArtifact::Contrast { report }) => {
                if !self.records.contains_key(r) {
                    return Err(Self::missing(r));
                }
                self.reports.insert(r.clone(), report);
            }
            (NodeKey::Align(r), NodeArtifact::Alignment { alignment }) => {
                if !self.records.contains_key(r) {
                    return Err(Self::missing(r));
                }
                self.alignments.insert(r.clone(), alignment);
            }
            (NodeKey::Iterate(s), NodeArtifact::Revision { schema, applied }) => {
                let cluster = ClusterId::new(schema_cluster_id(s.as_str()));
                let latest = self.latest_schema(cluster.as_str()).ok_or_else(|| Self::missing(s))?;
                if latest.id != *s || schema.parent.as_ref() != Some(s) || schema.revision != latest.revision + 1 {
                    return Err(FoldError::Inconsistent(format!("{} does not extend {s}", schema.id)));
                }
                let cs = self.cluster_state(&cluster);
                cs.applied.insert(schema.id.clone(), applied);
                cs.revisions.push(schema);
            }
            _ => unreachable!("artifact kind checked by the caller"),
        }
        Ok(())
    }

    /// Drops every artifact of `cluster` from `stage` on, with node statuses.
    fn clear_from(&mut self, cluster: &ClusterId, stage: Stage) {
        if let Some(cs) = self.clusters.get_mut(cluster) {
            if stage <= Stage::Attributes {
                cs.attributes = None;
            }
            if stage <= Stage::Overall {
                cs.overall = None;
            }
            cs.revisions.clear();
            cs.applied.clear();
        }
        let c = cluster.as_str();
        self.status.retain(|k, _| {
            let drop = match k {
                NodeKey::Attributes(x) => stage <= Stage::Attributes && x.as_str() == c,
                NodeKey::Overall(x) => stage <= Stage::Overall && x.as_str() == c,
                k => is_refinement(k) && node_cluster(k) == Some(c),
            };
            !drop
        });
        self.drop_records(|r| schema_cluster_id(record_schema_id(r)) == c);
    }

    fn drop_records(&mut self, pred: impl Fn(&str) -> bool) {
        self.records.retain(|id, _| !pred(id.as_str()));
        self.reports.retain(|id, _| !pred(id.as_str()));
        self.alignments.retain(|id, _| !pred(id.as_str()));
        self.status.retain(|k, _| match k {
            NodeKey::Contrast(r) | NodeKey::Align(r) => !pred(r.as_str()),
            _ => true,
        });
    }

    fn apply_edit(&mut self, edit: &SessionEdit) -> Result<(), FoldError> {
        match edit {
            SessionEdit::Cluster { edit } => {
                let current = self.clustering.as_ref().ok_or_else(|| Self::missing("clustering"))?;
                let next = apply_cluster_edit(&current.clustering, edit)?;
                let changed: Vec<ClusterId> = current
                    .clustering
                    .clusters
                    .iter()
                    .filter(|old| {
                        next.cluster(old.id.as_str()).is_none_or(|new| {
                            new.member_ids != old.member_ids || new.common_features != old.common_features
                        })
                    })
                    .map(|c| c.id.clone())
                    .collect();
                for c in changed {
                    self.clusters.remove(&c);
                    self.status.retain(|k, _| node_cluster(k) != Some(c.as_str()));
                    self.drop_records(|r| schema_cluster_id(record_schema_id(r)) == c.as_str());
                }
                if let Some(a) = self.clustering.as_mut() {
                    a.clustering = next;
                }
            }
            SessionEdit::Schema { cluster, edit } => {
                let cs = self
                    .clusters
                    .get_mut(cluster)
                    .filter(|cs| !cs.revisions.is_empty())
                    .ok_or_else(|| FoldError::Stage(StageError::UnknownTarget(format!("schema of {cluster}"))))?;
                let latest = cs.revisions.last_mut().expect("checked non-empty");
                *latest = apply_schema_edit(latest, edit)?;
            }
            SessionEdit::Review {
                record,
                suggestion,
                action,
            } => {
                let report = self.reports.get_mut(record).ok_or_else(|| {
                    FoldError::Stage(StageError::UnknownTarget(format!("contrast report of {record}")))
                })?;
                *report = review_suggestion(report, suggestion.as_str(), action)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Attributes,
    Overall,
    Schema,
}

#[cfg(test)]
mod tests {
    use super::*;
    use schemind_core::Example;

    fn created() -> EventBody {
        EventBody::SessionCreated {
            id: "s".into(),
            config: SessionConfig::default(),
            example_set: schemind_core::new_example_set("g", vec![Example::text("e1", "x")]).unwrap(),
            warnings: vec![],
        }
    }

    #[test]
    fn id_helpers() {
        assert_eq!(schema_cluster_id("c12-r3"), "c12");
        assert_eq!(record_schema_id("c1-r0.g10"), "c1-r0");
        assert_eq!(node_cluster(&"align:c2-r1.g3".parse().unwrap()), Some("c2"));
        assert_eq!(node_cluster(&NodeKey::Cluster), None);
    }

    #[test]
    fn completion_needs_a_start_and_matching_kind() {
        let mut s = SessionState::genesis(&created()).unwrap();
        let done = EventBody::NodeCompleted {
            node: NodeKey::Cluster,
            artifact: NodeArtifact::Records { records: vec![] },
        };
        assert!(s.apply(&done).is_err());
        s.apply(&EventBody::NodeStarted { node: NodeKey::Cluster }).unwrap();
        assert!(s.apply(&EventBody::NodeStarted { node: NodeKey::Cluster }).is_err());
        assert!(s.apply(&done).is_err());
        s.apply(&EventBody::NodeInterrupted { node: NodeKey::Cluster }).unwrap();
        assert!(matches!(s.status(&NodeKey::Cluster), NodeStatus::Failed(_)));
    }

    #[test]
    fn edits_need_their_artifact() {
        let mut s = SessionState::genesis(&created()).unwrap();
        let edit = SessionEdit::Review {
            record: "c1-r0.g1".into(),
            suggestion: "c1-r0.g1.s1".into(),
            action: ReviewAction::Accept,
        };
        assert!(matches!(
            s.apply(&EventBody::EditCommitted { edit }),
            Err(FoldError::Stage(StageError::UnknownTarget(_)))
        ));
    }

    #[test]
    fn edit_json_shape() {
        let edit: SessionEdit = serde_json::from_str(
            r#"{"target":"review","record":"c1-r0.g1","suggestion":"c1-r0.g1.s1","action":"edit","text":"x"}"#,
        )
        .unwrap();
        assert!(matches!(
            edit,
            SessionEdit::Review {
                action: ReviewAction::Edit(_),
                ..
            }
        ));
        let edit: SessionEdit =
            serde_json::from_str(r#"{"target":"cluster","edit":{"kind":"rename_cluster","cluster":"c1","name":"N"}}"#)
                .unwrap();
        assert!(matches!(edit, SessionEdit::Cluster { .. }));
    }
}
