//! Runs one node against an immutable state snapshot.

use schemind_core::abstraction::{
    assemble_schema, infer_dimension_attributes, infer_dimensions, infer_overall_attributes, SchemaParts,
};
use schemind_core::clustering::{build_feature_matrix, propose_clusters};
use schemind_core::refinement::{align_segments, apply_schema, contrast, iterate_schema, ApplyOptions, ApplyTargets};
use schemind_core::{Cluster, Example, Gateway, GenerationRecord, ImprovementSuggestion, StageError};

use crate::node::NodeKey;
use crate::state::{
    AttributesArtifact, ClusteringArtifact, DimensionsArtifact, FeatureArtifact, NodeArtifact, OverallArtifact,
    SessionState,
};

fn cluster<'a>(state: &'a SessionState, id: &str) -> Result<&'a Cluster, StageError> {
    state
        .cluster(id)
        .ok_or_else(|| StageError::UnknownCluster(id.to_string()))
}

fn record<'a>(state: &'a SessionState, id: &str) -> Result<(&'a GenerationRecord, &'a Example), StageError> {
    let record = state
        .records
        .get(id)
        .ok_or_else(|| StageError::UnknownTarget(id.to_string()))?;
    let gold_id = record
        .gold_id
        .as_ref()
        .ok_or_else(|| StageError::Precondition(format!("{id} has no gold example")))?;
    let gold = state
        .example_set
        .get(gold_id.as_str())
        .ok_or_else(|| StageError::UnknownExample(gold_id.to_string()))?;
    Ok((record, gold))
}

fn schema_of<'a>(state: &'a SessionState, id: &str) -> Result<&'a schemind_core::Schema, StageError> {
    state
        .schema(id)
        .ok_or_else(|| StageError::UnknownTarget(id.to_string()))
}

/// Accepted and edited suggestions from every contrast report of `schema`.
pub fn applied_suggestions(state: &SessionState, schema: &str) -> Vec<ImprovementSuggestion> {
    state
        .records_of(schema)
        .filter_map(|r| state.reports.get(&r.id))
        .flat_map(|rep| rep.applied().cloned())
        .collect()
}

pub fn execute(
    node: &NodeKey,
    state: &SessionState,
    targets: Option<ApplyTargets>,
    gateway: &Gateway,
) -> Result<NodeArtifact, StageError> {
    let set = &state.example_set;
    let strict = state.config.strict;
    Ok(match node {
        NodeKey::Cluster => {
            let out = propose_clusters(set, gateway)?;
            NodeArtifact::Clustering(ClusteringArtifact {
                clustering: out.clustering,
                warnings: out.warnings,
            })
        }
        NodeKey::FeatureMatrix(c) => {
            let out = build_feature_matrix(cluster(state, c.as_str())?, set, gateway, strict)?;
            NodeArtifact::FeatureMatrix(FeatureArtifact {
                matrix: out.cluster.feature_matrix.expect("feature matrix is set on success"),
                report: out.report,
                warnings: out.warnings,
            })
        }
        NodeKey::Dimensions(c) => {
            let out = infer_dimensions(cluster(state, c.as_str())?, set, gateway, strict)?;
            NodeArtifact::Dimensions(DimensionsArtifact {
                dimensions: out.dimensions,
                matrix: out.matrix,
                report: out.report,
                warnings: out.warnings,
            })
        }
        NodeKey::Attributes(c) => {
            let dims = state
                .clusters
                .get(c)
                .and_then(|cs| cs.dimensions.as_ref())
                .ok_or_else(|| StageError::Precondition(format!("{c} has no dimensions")))?;
            let out =
                infer_dimension_attributes(cluster(state, c.as_str())?, set, &dims.dimensions, gateway, strict, 1)?;
            let next_ordinal = out.next_ordinal(1);
            NodeArtifact::Attributes(AttributesArtifact {
                attributes: out.attributes,
                matrices: out.matrices,
                report: out.report,
                support: out.support,
                warnings: out.warnings,
                next_ordinal,
            })
        }
        NodeKey::Overall(c) => {
            let cl = cluster(state, c.as_str())?;
            let cs = state.clusters.get(c);
            let (dims, attrs) = match cs.map(|cs| (&cs.dimensions, &cs.attributes)) {
                Some((Some(d), Some(a))) => (d, a),
                _ => return Err(StageError::Precondition(format!("{c} has no attributes"))),
            };
            let out = infer_overall_attributes(cl, set, gateway, strict, attrs.next_ordinal)?;
            // Fail the node here rather than at commit if the parts do not assemble.
            assemble_schema(
                cl,
                SchemaParts {
                    dimensions: dims.dimensions.clone(),
                    dimension_matrix: dims.matrix.clone(),
                    attributes: attrs.attributes.clone(),
                    attribute_matrices: attrs.matrices.clone(),
                    overall_attributes: out.attributes.clone(),
                    overall_matrix: out.matrix.clone(),
                },
            )?;
            NodeArtifact::Overall(OverallArtifact {
                attributes: out.attributes,
                matrix: out.matrix,
                report: out.report,
                support: out.support,
                warnings: out.warnings,
            })
        }
        NodeKey::Apply(s) => {
            let schema = schema_of(state, s.as_str())?;
            let options = ApplyOptions {
                targets: targets.unwrap_or(ApplyTargets::Both(state.config.k)),
                seed: state.config.seed,
                first_record: 1,
            };
            let records = apply_schema(
                schema,
                cluster(state, schema.cluster_id.as_str())?,
                set,
                &options,
                gateway,
            )?;
            NodeArtifact::Records { records }
        }
        NodeKey::Contrast(r) => {
            let (rec, gold) = record(state, r.as_str())?;
            let report = contrast(schema_of(state, rec.schema_id.as_str())?, rec, gold, gateway)?;
            NodeArtifact::Contrast { report }
        }
        NodeKey::Align(r) => {
            let (rec, gold) = record(state, r.as_str())?;
            let alignment = align_segments(schema_of(state, rec.schema_id.as_str())?, rec, gold, gateway)?;
            NodeArtifact::Alignment { alignment }
        }
        NodeKey::Iterate(s) => {
            let schema = schema_of(state, s.as_str())?;
            let suggestions = applied_suggestions(state, s.as_str());
            let out = iterate_schema(
                schema,
                cluster(state, schema.cluster_id.as_str())?,
                &set.goal,
                &suggestions,
                gateway,
            )?;
            NodeArtifact::Revision {
                schema: out.schema,
                applied: out.applied,
            }
        }
    })
}
