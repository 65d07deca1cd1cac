use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemind_core::diff::diff_revisions;
use schemind_core::evidence::check_segment_map;
use schemind_core::gateway::Transcript;
use schemind_core::ingest::{load_examples, IngestManifest, IngestOptions};
use schemind_core::pipeline::{run_pipeline, PipelineConfig, PipelineRun};
use schemind_core::refinement::{align_segments, contrast, run_baseline, schema_text};
use schemind_core::testkit::ScriptedModel;
use schemind_core::{
    check_partition, ExampleSet, Gateway, GatewayError, ImprovementTag, ModelParams, SuggestionTarget, TranscriptMode,
};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/walkthrough")
}

fn examples() -> ExampleSet {
    let manifest = IngestManifest::load(&fixture().join("manifest.json"), None).unwrap();
    load_examples(&manifest, &IngestOptions::default()).unwrap()
}

fn replay() -> Gateway {
    Gateway::with_transcript(
        TranscriptMode::Replay(fixture().join("transcript.jsonl")),
        None,
        ModelParams::default(),
    )
    .unwrap()
}

fn run(iterations: usize) -> PipelineRun {
    let config = PipelineConfig {
        iterations,
        ..PipelineConfig::default()
    };
    run_pipeline(examples(), &config, &replay()).unwrap()
}

#[test]
fn replay_reproduces_walkthrough() {
    let run = run(1);
    assert_eq!(run.clusters.len(), 3);
    assert!(check_partition(&run.clustering, &run.set.induction_ids()).is_empty());
    let theory = run
        .clusters
        .iter()
        .find(|c| c.cluster.name == "Theoretical Contributions")
        .unwrap();
    let r0 = &theory.revisions[0];
    assert_eq!(r0.dimensions.len(), 4);
    assert!(r0
        .overall_attributes
        .iter()
        .any(|a| a.detailed.contains("words") || a.concise.contains("Word")));
    let adds: Vec<_> = theory
        .reports
        .iter()
        .flat_map(|r| &r.suggestions)
        .filter(|s| s.tag == ImprovementTag::Add)
        .collect();
    assert_eq!(adds.len(), 1);
    let findings = r0.dimension_by_name("Findings and Contributions").unwrap();
    assert_eq!(adds[0].target, SuggestionTarget::Dimension(findings.id.clone()));
    assert!(adds[0].text.contains("theoretical integration"));

    let r1 = &theory.revisions[1];
    assert_eq!(r1.revision, 1);
    assert_eq!(r1.parent.as_ref(), Some(&r0.id));
    let diff = diff_revisions(r0, r1).unwrap();
    assert_eq!(diff.added_attributes.len(), 1, "{:?}", diff.summary());
    assert_eq!(diff.summary().len(), 1, "{:?}", diff.summary());
    assert_eq!(diff.added_attributes[0].attribute.concise, "Theoretical Integration");
}

#[test]
fn replay_is_deterministic() {
    let a = run(1);
    let b = run(1);
    let dump = |r: &PipelineRun| {
        r.clusters
            .iter()
            .map(|c| serde_json::to_string(&(&c.revisions, &c.records, &c.reports)).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(dump(&a), dump(&b));
}

#[test]
fn holdouts_stay_out_of_matrices() {
    let run = run(1);
    for c in &run.clusters {
        for (_, m) in c.latest().matrices() {
            assert!(m.row_ids().iter().all(|r| !run.set.is_holdout(r.as_str())));
        }
        assert!(c.records.iter().filter(|r| r.is_holdout).count() == run.set.holdout_ids.len());
        for r in &c.records {
            let gold = r.gold_id.as_ref().unwrap();
            assert_eq!(r.is_holdout, run.set.is_holdout(gold.as_str()));
        }
    }
}

#[test]
fn zero_iterations_has_no_generations() {
    let run = run(0);
    assert!(run
        .clusters
        .iter()
        .all(|c| c.revisions.len() == 1 && c.records.is_empty()));
}

#[test]
fn unverifiable_snippet_is_flagged() {
    let run = run(0);
    let theory = run
        .clusters
        .iter()
        .find(|c| c.cluster.name == "Theoretical Contributions")
        .unwrap();
    let dims = theory.verification.iter().find(|(k, _)| k == "dimensions").unwrap();
    assert_eq!(dims.1.unverifiable, 1);
}

#[test]
fn transcript_matches_a_fresh_recording() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let gateway = Gateway::with_transcript(
        TranscriptMode::Record(path.clone()),
        Some(Arc::new(ScriptedModel)),
        ModelParams::default(),
    )
    .unwrap();
    let set = examples();
    run_pipeline(set.clone(), &PipelineConfig::default(), &gateway).unwrap();
    run_baseline(&set, &gateway).unwrap();
    let committed = Transcript::load(&fixture().join("transcript.jsonl")).unwrap();
    let fresh = Transcript::load(&path).unwrap();
    for e in fresh.entries() {
        let c = committed
            .get(&e.fingerprint)
            .expect("fixture transcript is out of date");
        assert_eq!(c.response, e.response);
    }
}

#[test]
fn alignment_and_contrast_replay_cleanly() {
    let run = run(1);
    let gateway = Gateway::live(Arc::new(ScriptedModel), ModelParams::default());
    for c in &run.clusters {
        let schema = &c.revisions[0];
        let record = &c.records[0];
        let gold = run.set.get(record.gold_id.as_ref().unwrap().as_str()).unwrap();
        let names: Vec<String> = schema.dimensions.iter().map(|d| d.name.clone()).collect();
        let aligned = align_segments(schema, record, gold, &gateway).unwrap();
        assert!(!aligned.fallback);
        assert!(check_segment_map(&aligned.map, &record.composed, &gold.content, &names).is_empty());
        assert!(aligned
            .map
            .segments
            .iter()
            .any(|s| s.dimension.as_deref() == Some(names[0].as_str())));
        let again = contrast(schema, record, gold, &gateway).unwrap();
        assert_eq!(again.analysis, c.reports[0].analysis);
        let texts = |r: &schemind_core::refinement::ContrastReport| {
            r.suggestions.iter().map(|s| s.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(texts(&again), texts(&c.reports[0]));
        assert!(schema_text(schema).contains(&names[0]));
    }
}

#[test]
fn replay_miss_is_reported() {
    let gateway = replay();
    let err = gateway
        .send(&gateway.request("dimensions", "not in the transcript"))
        .unwrap_err();
    assert!(matches!(err, GatewayError::TranscriptMiss(_)));
}
