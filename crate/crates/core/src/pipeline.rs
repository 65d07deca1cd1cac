//! Unattended end-to-end run: split, cluster, induce a schema per cluster,
//! then apply/contrast/accept/iterate a fixed number of times.

use serde::{Deserialize, Serialize};

use crate::abstraction::{induce_schema, SupportFinding};
use crate::clustering::{build_feature_matrix, propose_clusters};
use crate::error::StageError;
use crate::evidence::VerificationReport;
use crate::gateway::Gateway;
use crate::model::{split_validation, Cluster, Clustering, ExampleSet, GenerationRecord, Schema};
use crate::refinement::{
    apply_schema, contrast, iterate_schema, review_suggestion, ApplyOptions, ApplyTargets, ContrastReport,
    ReviewAction, DEFAULT_SAMPLE_K,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub k: usize,
    pub holdout_ratio: f64,
    pub seed: u64,
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iterations: 1,
            k: DEFAULT_SAMPLE_K,
            holdout_ratio: 0.2,
            seed: 7,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRun {
    pub cluster: Cluster,
    /// Revision chain, revision 0 first.
    pub revisions: Vec<Schema>,
    pub records: Vec<GenerationRecord>,
    pub reports: Vec<ContrastReport>,
    pub support: Vec<SupportFinding>,
    pub verification: Vec<(String, VerificationReport)>,
    pub warnings: Vec<String>,
}

impl ClusterRun {
    pub fn latest(&self) -> &Schema {
        self.revisions.last().expect("at least revision 0")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub set: ExampleSet,
    pub clustering: Clustering,
    pub clusters: Vec<ClusterRun>,
    pub warnings: Vec<String>,
}

/// Runs every stage over an ingested set. Every suggestion is accepted,
/// holdout-derived ones included.
pub fn run_pipeline(set: ExampleSet, config: &PipelineConfig, gateway: &Gateway) -> Result<PipelineRun, StageError> {
    let split = split_validation(&set, config.holdout_ratio, config.seed)?;
    let mut warnings: Vec<String> = split.warning.into_iter().collect();
    let set = split.set;
    let clustering = propose_clusters(&set, gateway)?;
    warnings.extend(clustering.warnings);
    let clustering = clustering.clustering;
    let runs: Vec<Result<ClusterRun, StageError>> = std::thread::scope(|s| {
        let handles: Vec<_> = clustering
            .clusters
            .iter()
            .map(|c| {
                let set = &set;
                s.spawn(move || run_cluster(c, set, config, gateway))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cluster thread panicked"))
            .collect()
    });
    let clusters = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(PipelineRun {
        set,
        clustering,
        clusters,
        warnings,
    })
}

fn run_cluster(
    cluster: &Cluster,
    set: &ExampleSet,
    config: &PipelineConfig,
    gateway: &Gateway,
) -> Result<ClusterRun, StageError> {
    let mut warnings = Vec::new();
    let mut verification = Vec::new();
    let cluster = if cluster.common_features.is_empty() {
        warnings.push(format!("{}: no common features, feature matrix skipped", cluster.name));
        cluster.clone()
    } else {
        let fm = build_feature_matrix(cluster, set, gateway, config.strict)?;
        warnings.extend(fm.warnings);
        verification.push(("features".to_string(), fm.report));
        fm.cluster
    };
    let induced = induce_schema(&cluster, set, gateway, config.strict)?;
    verification.extend(induced.reports);
    warnings.extend(induced.warnings);
    let mut run = ClusterRun {
        cluster,
        revisions: vec![induced.schema],
        records: Vec::new(),
        reports: Vec::new(),
        support: induced.support,
        verification,
        warnings,
    };
    for _ in 0..config.iterations {
        let schema = run.latest().clone();
        let options = ApplyOptions {
            targets: ApplyTargets::Both(config.k),
            seed: config.seed,
            first_record: 1,
        };
        let records = apply_schema(&schema, &run.cluster, set, &options, gateway)?;
        let mut accepted = Vec::new();
        for record in &records {
            let gold_id = record.gold_id.as_ref().expect("apply sets the gold id");
            let gold = set
                .get(gold_id.as_str())
                .ok_or_else(|| StageError::UnknownExample(gold_id.to_string()))?;
            let mut report = contrast(&schema, record, gold, gateway)?;
            let ids: Vec<String> = report.suggestions.iter().map(|s| s.id.to_string()).collect();
            for id in ids {
                report = review_suggestion(&report, &id, &ReviewAction::Accept)?;
            }
            accepted.extend(report.applied().cloned());
            run.reports.push(report);
        }
        run.records.extend(records);
        if accepted.is_empty() {
            run.warnings.push(format!(
                "{}: no suggestions for revision {}; iteration skipped",
                run.cluster.name, schema.revision
            ));
            break;
        }
        let next = iterate_schema(&schema, &run.cluster, &set.goal, &accepted, gateway)?;
        run.revisions.push(next.schema);
    }
    Ok(run)
}
