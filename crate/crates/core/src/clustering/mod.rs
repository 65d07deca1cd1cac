//! Stage 1: cluster proposal, the feature×example matrix, and cluster edits.

mod prose;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use prose::{parse_cluster_prose, to_prose, ParsedProse, ProseCluster};

use crate::error::StageError;
use crate::evidence::{check_partition, verify_matrix, NormalizationPolicy, VerificationReport};
use crate::gateway::{render, Gateway, ResponseFormat, TemplateId};
use crate::model::{Cluster, ClusterId, Clustering, ColumnId, EvidenceCell, ExampleId, ExampleSet};
use crate::prompting::{
    ask_with_correction, example_blocks, example_map, input_context_block, judgment, members, same_name, str_field,
    CellGrid, Rejection,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringOutcome {
    pub clustering: Clustering,
    pub warnings: Vec<String>,
}

/// Asks for clusters over the non-holdout examples and validates that they
/// partition them. One corrective re-ask lists the violations.
pub fn propose_clusters(set: &ExampleSet, gateway: &Gateway) -> Result<ClusteringOutcome, StageError> {
    let examples: Vec<_> = set.induction_examples().collect();
    if examples.is_empty() {
        return Err(StageError::Precondition("no non-holdout examples to cluster".into()));
    }
    let expected = set.induction_ids();
    let prompt = render(
        TemplateId::Clustering,
        &[
            ("content_type", set.goal.clone()),
            ("examples", example_blocks(&examples)),
            ("input_context", input_context_block(&examples)),
        ],
    )?;
    ask_with_correction(
        gateway,
        TemplateId::Clustering.as_str(),
        &prompt,
        &ResponseFormat::ClusterProse,
        |completion| {
            let parsed = parse_cluster_prose(completion.text());
            if parsed.clusters.is_empty() {
                return Err(Rejection::parse(
                    "clustering",
                    "no \"Cluster <k>: <name>\" sections found",
                ));
            }
            let clustering = from_prose(&parsed.clusters, expected.clone());
            let violations = check_partition(&clustering, &expected);
            if !violations.is_empty() {
                let mut problems: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                problems.push("Assign every example to exactly one cluster, with no omissions or duplicates.".into());
                return Err(Rejection::new(problems, StageError::PartitionViolation(violations)));
            }
            Ok(ClusteringOutcome {
                clustering,
                warnings: parsed.warnings,
            })
        },
    )
}

/// Builds a clustering from parsed sections, assigning ids `c1..`.
pub fn from_prose(clusters: &[ProseCluster], over: Vec<ExampleId>) -> Clustering {
    Clustering {
        clusters: clusters
            .iter()
            .enumerate()
            .map(|(i, c)| Cluster {
                id: ClusterId(format!("c{}", i + 1)),
                name: c.name.clone(),
                common_features: c.features.clone(),
                member_ids: c.members.iter().map(|m| ExampleId(m.clone())).collect(),
                feature_matrix: None,
            })
            .collect(),
        over,
    }
}

/// The clustering in the prose response shape.
pub fn clustering_to_prose(clustering: &Clustering) -> String {
    let sections: Vec<ProseCluster> = clustering
        .clusters
        .iter()
        .map(|c| ProseCluster {
            name: c.name.clone(),
            features: c.common_features.clone(),
            members: c.member_ids.iter().map(|m| m.to_string()).collect(),
            stated_total: Some(c.member_ids.len()),
        })
        .collect();
    to_prose(&sections)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrixOutcome {
    pub cluster: Cluster,
    pub report: VerificationReport,
    pub warnings: Vec<String>,
}

/// Judges every member against every common feature and verifies the
/// quoted snippets.
pub fn build_feature_matrix(
    cluster: &Cluster,
    set: &ExampleSet,
    gateway: &Gateway,
    strict: bool,
) -> Result<FeatureMatrixOutcome, StageError> {
    if cluster.common_features.is_empty() {
        return Err(StageError::Precondition(format!(
            "cluster {} has no common features",
            cluster.id
        )));
    }
    let examples = members(set, &cluster.member_ids)?;
    let columns = cluster.feature_ids();
    let features_text: String = columns
        .iter()
        .zip(&cluster.common_features)
        .map(|(id, f)| format!("\n{id}: {f}"))
        .collect();
    let prompt = render(
        TemplateId::FeatureMatrix,
        &[
            ("content_type", set.goal.clone()),
            ("cluster_name", cluster.name.clone()),
            ("common_features", features_text),
            ("examples", example_blocks(&examples)),
        ],
    )?;
    let describe = |c: &str| {
        let i = columns.iter().position(|x| x.as_str() == c).unwrap_or(0);
        format!("feature {c} ({})", cluster.common_features[i])
    };
    let (matrix, warnings) = ask_with_correction(
        gateway,
        TemplateId::FeatureMatrix.as_str(),
        &prompt,
        &ResponseFormat::object(&["mapping"]),
        |completion| {
            let obj = completion.object().expect("structured");
            let Some(mapping) = obj.get("mapping").and_then(Value::as_array) else {
                return Err(Rejection::parse("feature matrix", "\"mapping\" must be an array"));
            };
            let mut grid = CellGrid::new(cluster.member_ids.clone(), columns.clone());
            for item in mapping {
                let raw_id = item.get("example_index").or_else(|| item.get("example_id"));
                let Some(row) = raw_id.and_then(|v| grid.row(v)) else {
                    continue;
                };
                let fms = item
                    .get("feature_mapping")
                    .and_then(Value::as_array)
                    .cloned()
                    .unwrap_or_default();
                for fm in &fms {
                    let col = resolve_feature(fm, &columns, &cluster.common_features);
                    let Some(col) = col else {
                        grid.warnings
                            .push(format!("ignored judgment for unknown feature in {row}"));
                        continue;
                    };
                    match judgment(fm, "applies") {
                        Ok(j) => grid.put(
                            row.clone(),
                            col,
                            EvidenceCell::judged(
                                j,
                                str_field(fm, "explanation").unwrap_or_default(),
                                str_field(fm, "snippet").map(str::to_string),
                            ),
                        ),
                        Err(e) => grid.problems.push(format!("Example {row}: {e}")),
                    }
                }
            }
            grid.finish(&format!("features/{}", cluster.name), describe)
        },
    )?;
    let (matrix, report) = verify_matrix(&matrix, &example_map(set), strict, &NormalizationPolicy::default())?;
    let mut out = cluster.clone();
    out.feature_matrix = Some(matrix);
    Ok(FeatureMatrixOutcome {
        cluster: out,
        report,
        warnings,
    })
}

fn resolve_feature(fm: &Value, columns: &[ColumnId], features: &[String]) -> Option<ColumnId> {
    if let Some(id) = str_field(fm, "feature_id") {
        if let Some(c) = columns.iter().find(|c| c.as_str().eq_ignore_ascii_case(id.trim())) {
            return Some(c.clone());
        }
    }
    let name = str_field(fm, "feature")?;
    features
        .iter()
        .position(|f| same_name(f, name))
        .map(|i| columns[i].clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterEdit {
    MoveExample {
        example: ExampleId,
        from: ClusterId,
        to: ClusterId,
    },
    RenameCluster {
        cluster: ClusterId,
        name: String,
    },
    MergeClusters {
        a: ClusterId,
        b: ClusterId,
        name: String,
    },
}

/// Applies one edit. Feature matrices of touched clusters are dropped and a
/// cluster emptied by a move is removed.
pub fn apply_cluster_edit(clustering: &Clustering, edit: &ClusterEdit) -> Result<Clustering, StageError> {
    let index = |id: &ClusterId| {
        clustering
            .clusters
            .iter()
            .position(|c| &c.id == id)
            .ok_or_else(|| StageError::UnknownCluster(id.to_string()))
    };
    let mut out = clustering.clone();
    match edit {
        ClusterEdit::MoveExample { example, from, to } => {
            let (f, t) = (index(from)?, index(to)?);
            if f == t {
                return Err(StageError::NoOp(format!("{example} is already in {from}")));
            }
            let pos = out.clusters[f]
                .member_ids
                .iter()
                .position(|m| m == example)
                .ok_or_else(|| StageError::UnknownExample(example.to_string()))?;
            out.clusters[f].member_ids.remove(pos);
            out.clusters[t].member_ids.push(example.clone());
            out.clusters[f].feature_matrix = None;
            out.clusters[t].feature_matrix = None;
            if out.clusters[f].member_ids.is_empty() {
                out.clusters.remove(f);
            }
        }
        ClusterEdit::RenameCluster { cluster, name } => {
            let i = index(cluster)?;
            let name = name.trim();
            if name.is_empty() {
                return Err(StageError::Precondition("cluster name must not be empty".into()));
            }
            if out.clusters[i].name == name {
                return Err(StageError::NoOp(format!("{cluster} is already named {name:?}")));
            }
            out.clusters[i].name = name.to_string();
        }
        ClusterEdit::MergeClusters { a, b, name } => {
            let (ia, ib) = (index(a)?, index(b)?);
            if ia == ib {
                return Err(StageError::NoOp(format!("cannot merge {a} with itself")));
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(StageError::Precondition("cluster name must not be empty".into()));
            }
            let absorbed = out.clusters[ib].clone();
            let target = &mut out.clusters[ia];
            target.name = name.to_string();
            target.member_ids.extend(absorbed.member_ids);
            for f in absorbed.common_features {
                if !target.common_features.iter().any(|x| same_name(x, &f)) {
                    target.common_features.push(f);
                }
            }
            target.feature_matrix = None;
            out.clusters.remove(ib);
        }
    }
    Ok(out)
}
