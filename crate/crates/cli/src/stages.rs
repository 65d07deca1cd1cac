//! One function per stage, each reading its inputs from and writing its
//! outputs to a [`Workspace`]. `run` chains the same functions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use schemind_core::abstraction::{
    assemble_schema, infer_dimension_attributes, infer_dimensions, infer_overall_attributes, SchemaParts,
};
use schemind_core::clustering::{build_feature_matrix, propose_clusters};
use schemind_core::ingest::{load_examples, IngestManifest, IngestOptions};
use schemind_core::refinement::{
    apply_schema, contrast, iterate_schema, review_suggestion, ApplyOptions, ApplyTargets, ContrastReport, ReviewAction,
};
use schemind_core::{
    split_validation, Cluster, ClusterId, ExampleSet, Gateway, GenerationRecord, ReviewStatus, StageError,
};
use schemind_service::state::{AttributesArtifact, DimensionsArtifact, FeatureArtifact, OverallArtifact};

use crate::error::CliError;
use crate::workspace::{
    ByCluster, Workspace, ATTRIBUTES, CLUSTERS, DIMENSIONS, EXAMPLES, FEATURES, GENERATIONS, OVERALL, REPORTS,
};

#[derive(Debug, Clone, Copy)]
pub struct Tuning {
    pub k: usize,
    pub holdout_ratio: f64,
    pub seed: u64,
    pub strict: bool,
}

/// Clusters a stage acts on; `None` means all.
pub type Only<'a> = Option<&'a BTreeSet<ClusterId>>;

fn selected<'a>(clusters: &'a [Cluster], only: Only<'_>) -> Vec<&'a Cluster> {
    clusters
        .iter()
        .filter(|c| only.is_none_or(|s| s.contains(&c.id)))
        .collect()
}

/// Runs `f` for every cluster on its own thread; results keep cluster ids.
fn per_cluster<T: Send>(
    clusters: &[&Cluster],
    f: impl Fn(&Cluster) -> Result<T, StageError> + Sync,
) -> Result<ByCluster<T>, StageError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = clusters
            .iter()
            .map(|c| {
                let f = &f;
                (c.id.clone(), s.spawn(move || f(c)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(id, h)| Ok((id, h.join().expect("cluster worker panicked")?)))
            .collect()
    })
}

/// Ingests the examples and withholds the holdout.
pub fn ingest(
    goal: &str,
    examples: &Path,
    tuning: &Tuning,
    gateway: &Gateway,
) -> Result<(ExampleSet, Vec<String>), CliError> {
    let manifest = IngestManifest::load(examples, Some(goal)).map_err(StageError::from)?;
    let options = IngestOptions {
        gateway: Some(gateway),
        ..IngestOptions::default()
    };
    let set = load_examples(&manifest, &options)?;
    let split = split_validation(&set, tuning.holdout_ratio, tuning.seed).map_err(StageError::from)?;
    Ok((split.set, split.warning.into_iter().collect()))
}

pub fn cluster(ws: &Workspace, set: &ExampleSet, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let out = propose_clusters(set, gateway)?;
    ws.write_json(EXAMPLES, set)?;
    ws.write_json(CLUSTERS, &out.clustering)?;
    Ok(out.warnings)
}

pub fn features(ws: &Workspace, tuning: &Tuning, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let mut warnings = Vec::new();
    let with_features: Vec<&Cluster> = clustering
        .clusters
        .iter()
        .filter(|c| {
            let keep = !c.common_features.is_empty();
            if !keep {
                warnings.push(format!("{}: no common features, feature matrix skipped", c.name));
            }
            keep
        })
        .collect();
    let out = per_cluster(&with_features, |c| {
        let fm = build_feature_matrix(c, &set, gateway, tuning.strict)?;
        Ok(FeatureArtifact {
            matrix: fm.cluster.feature_matrix.expect("set on success"),
            report: fm.report,
            warnings: fm.warnings,
        })
    })?;
    warnings.extend(out.values().flat_map(|a| a.warnings.iter().cloned()));
    ws.write_json(FEATURES, &out)?;
    Ok(warnings)
}

pub fn dimensions(ws: &Workspace, tuning: &Tuning, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let out = per_cluster(&selected(&clustering.clusters, None), |c| {
        let d = infer_dimensions(c, &set, gateway, tuning.strict)?;
        Ok(DimensionsArtifact {
            dimensions: d.dimensions,
            matrix: d.matrix,
            report: d.report,
            warnings: d.warnings,
        })
    })?;
    ws.write_json(DIMENSIONS, &out)?;
    Ok(out.values().flat_map(|a| a.warnings.iter().cloned()).collect())
}

pub fn attributes(ws: &Workspace, tuning: &Tuning, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let dims = ws.dimensions()?;
    let out = per_cluster(&selected(&clustering.clusters, None), |c| {
        let d = dims
            .get(&c.id)
            .ok_or_else(|| StageError::Precondition(format!("{DIMENSIONS} has no entry for {}", c.id)))?;
        let a = infer_dimension_attributes(c, &set, &d.dimensions, gateway, tuning.strict, 1)?;
        Ok(AttributesArtifact {
            next_ordinal: a.next_ordinal(1),
            attributes: a.attributes,
            matrices: a.matrices,
            report: a.report,
            support: a.support,
            warnings: a.warnings,
        })
    })?;
    ws.write_json(ATTRIBUTES, &out)?;
    Ok(out.values().flat_map(|a| a.warnings.iter().cloned()).collect())
}

/// Infers overall attributes and assembles revision 0 of every schema.
pub fn overall(ws: &Workspace, tuning: &Tuning, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let dims = ws.dimensions()?;
    let attrs = ws.attributes()?;
    let missing = |file: &str, c: &ClusterId| StageError::Precondition(format!("{file} has no entry for {c}"));
    let out = per_cluster(&selected(&clustering.clusters, None), |c| {
        let a = attrs.get(&c.id).ok_or_else(|| missing(ATTRIBUTES, &c.id))?;
        let o = infer_overall_attributes(c, &set, gateway, tuning.strict, a.next_ordinal)?;
        Ok(OverallArtifact {
            attributes: o.attributes,
            matrix: o.matrix,
            report: o.report,
            support: o.support,
            warnings: o.warnings,
        })
    })?;
    let mut schemas = Vec::new();
    for c in &clustering.clusters {
        let (d, a, o) = (
            dims.get(&c.id).ok_or_else(|| missing(DIMENSIONS, &c.id))?,
            attrs.get(&c.id).ok_or_else(|| missing(ATTRIBUTES, &c.id))?,
            &out[&c.id],
        );
        schemas.push(assemble_schema(
            c,
            SchemaParts {
                dimensions: d.dimensions.clone(),
                dimension_matrix: d.matrix.clone(),
                attributes: a.attributes.clone(),
                attribute_matrices: a.matrices.clone(),
                overall_attributes: o.attributes.clone(),
                overall_matrix: o.matrix.clone(),
            },
        )?);
    }
    ws.write_json(OVERALL, &out)?;
    for schema in &schemas {
        let dir = ws.path(&format!("clusters/{}", schema.cluster_id));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        ws.write_schema(schema)?;
    }
    Ok(out.values().flat_map(|a| a.warnings.iter().cloned()).collect())
}

/// Applies the latest schema of each selected cluster to `k` sampled members
/// and every holdout example, replacing earlier records of that schema.
pub fn apply(ws: &Workspace, only: Only<'_>, tuning: &Tuning, gateway: &Gateway) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let clusters = selected(&clustering.clusters, only);
    let schemas = clusters
        .iter()
        .map(|c| Ok((c.id.clone(), ws.latest_schema(&c.id)?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let options = ApplyOptions {
        targets: ApplyTargets::Both(tuning.k),
        seed: tuning.seed,
        first_record: 1,
    };
    let out = per_cluster(&clusters, |c| apply_schema(&schemas[&c.id], c, &set, &options, gateway))?;
    let applied: BTreeSet<_> = schemas.values().map(|s| s.id.clone()).collect();
    let mut records: Vec<GenerationRecord> = ws
        .generations()?
        .into_iter()
        .filter(|r| !applied.contains(&r.schema_id))
        .collect();
    for c in &clusters {
        records.extend(out[&c.id].iter().cloned());
    }
    ws.write_jsonl(GENERATIONS, &records)?;
    Ok(Vec::new())
}

/// Contrasts every generation of the selected clusters' latest schemas
/// with its gold example. With `accept_all` every suggestion is accepted.
pub fn contrast_stage(
    ws: &Workspace,
    only: Only<'_>,
    accept_all: bool,
    gateway: &Gateway,
) -> Result<Vec<String>, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let clusters = selected(&clustering.clusters, only);
    let schemas = clusters
        .iter()
        .map(|c| Ok((c.id.clone(), ws.latest_schema(&c.id)?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let generations = ws.generations()?;
    if generations.is_empty() {
        return Err(CliError::MissingArtifact(ws.path(GENERATIONS)));
    }
    let out = per_cluster(&clusters, |c| {
        let schema = &schemas[&c.id];
        generations
            .iter()
            .filter(|r| r.schema_id == schema.id)
            .map(|r| {
                let gold_id = r
                    .gold_id
                    .as_ref()
                    .ok_or_else(|| StageError::Precondition(format!("{} has no gold example", r.id)))?;
                let gold = set
                    .get(gold_id.as_str())
                    .ok_or_else(|| StageError::UnknownExample(gold_id.to_string()))?;
                let mut report = contrast(schema, r, gold, gateway)?;
                if accept_all {
                    let ids: Vec<String> = report.suggestions.iter().map(|s| s.id.to_string()).collect();
                    for id in ids {
                        report = review_suggestion(&report, &id, &ReviewAction::Accept)?;
                    }
                }
                Ok(report)
            })
            .collect::<Result<Vec<_>, StageError>>()
    })?;
    let fresh: Vec<ContrastReport> = clusters.iter().flat_map(|c| out[&c.id].iter().cloned()).collect();
    let replaced: BTreeSet<_> = fresh.iter().map(|r| r.record_id.clone()).collect();
    let mut reports: Vec<ContrastReport> = ws
        .reports()?
        .into_iter()
        .filter(|r| !replaced.contains(&r.record_id))
        .collect();
    reports.extend(fresh);
    ws.write_jsonl(REPORTS, &reports)?;
    Ok(Vec::new())
}

/// Outcome of [`iterate`]: clusters that gained a revision.
pub struct Iterated {
    pub advanced: BTreeSet<ClusterId>,
    pub warnings: Vec<String>,
}

/// Revises the latest schema of each selected cluster from its accepted
/// and edited suggestions. Clusters without any are left as they are.
pub fn iterate(ws: &Workspace, only: Only<'_>, accept_pending: bool, gateway: &Gateway) -> Result<Iterated, CliError> {
    let set = ws.examples()?;
    let clustering = ws.clustering()?;
    let clusters = selected(&clustering.clusters, only);
    let generations = ws.generations()?;
    let reports = ws.reports()?;
    if reports.is_empty() {
        return Err(CliError::MissingArtifact(ws.path(REPORTS)));
    }
    let mut warnings = Vec::new();
    let mut work = Vec::new();
    for c in &clusters {
        let schema = ws.latest_schema(&c.id)?;
        let records: BTreeSet<_> = generations
            .iter()
            .filter(|r| r.schema_id == schema.id)
            .map(|r| r.id.clone())
            .collect();
        let suggestions: Vec<_> = reports
            .iter()
            .filter(|r| records.contains(&r.record_id))
            .flat_map(|r| r.suggestions.iter())
            .filter(|s| s.status.is_applied() || (accept_pending && s.status == ReviewStatus::Pending))
            .map(|s| {
                let mut s = s.clone();
                if s.status == ReviewStatus::Pending {
                    s.status = ReviewStatus::Accepted;
                }
                s
            })
            .collect();
        if suggestions.is_empty() {
            warnings.push(format!(
                "{}: no suggestions for revision {}; iteration skipped",
                c.name, schema.revision
            ));
        } else {
            work.push((*c, schema, suggestions));
        }
    }
    let chosen: Vec<&Cluster> = work.iter().map(|(c, _, _)| *c).collect();
    let out = per_cluster(&chosen, |c| {
        let (_, schema, suggestions) = work.iter().find(|(x, _, _)| x.id == c.id).expect("chosen from work");
        iterate_schema(schema, c, &set.goal, suggestions, gateway)
    })?;
    for next in out.values() {
        ws.write_schema(&next.schema)?;
    }
    if accept_pending && !out.is_empty() {
        let used: BTreeSet<_> = work
            .iter()
            .flat_map(|(_, _, s)| s.iter().map(|s| s.id.clone()))
            .collect();
        let reports: Vec<ContrastReport> = reports
            .into_iter()
            .map(|mut r| {
                for s in &mut r.suggestions {
                    if s.status == ReviewStatus::Pending && used.contains(&s.id) {
                        s.status = ReviewStatus::Accepted;
                    }
                }
                r
            })
            .collect();
        ws.write_jsonl(REPORTS, &reports)?;
    }
    Ok(Iterated {
        advanced: out.keys().cloned().collect(),
        warnings,
    })
}
