mod common;

use std::sync::Arc;

use common::*;
use schemind_core::abstraction::SchemaEdit;
use schemind_core::clustering::ClusterEdit;
use schemind_core::diff::diff_revisions;
use schemind_core::ingest::{load_examples, IngestManifest, IngestOptions};
use schemind_core::pipeline::{run_pipeline, PipelineConfig};
use schemind_core::refinement::ReviewAction;
use schemind_core::{ImprovementTag, ReviewStatus};
use schemind_service::events::{encode, verify};
use schemind_service::state::{fold, EventBody};
use schemind_service::store::{CreateSession, InlineExample, EVENTS_FILE};
use schemind_service::{NodeStatus, ServiceError, SessionEdit, SessionStore};

fn store(dir: &std::path::Path) -> SessionStore {
    SessionStore::new(dir, replay_gateway()).unwrap()
}

#[test]
fn walkthrough_session_has_twenty_examples_and_four_holdouts() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let session = store.create(&walkthrough_request()).unwrap();
    let state = session.state();
    assert_eq!(state.example_set.examples.len(), 20);
    let holdout: Vec<&str> = state.example_set.holdout_ids.iter().map(|i| i.as_str()).collect();
    assert_eq!(holdout, ["e1", "e3", "e6", "e16"]);
    assert!(session.dir().join(EVENTS_FILE).exists());
    assert!(session.dir().join("state.json").exists());
}

#[test]
fn invalid_manifest_reports_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"goal":"g","entries":[{"path":"missing.txt","modality":"text"}]}"#,
    )
    .unwrap();
    let store = store(&dir.path().join("data"));
    let err = store
        .create(&CreateSession {
            manifest: Some(bad),
            ..CreateSession::default()
        })
        .err()
        .unwrap();
    assert!(matches!(err, ServiceError::IngestFailed(_)), "{err:?}");
    assert!(err.to_string().contains("missing.txt"), "{err}");
    let neither = store.create(&CreateSession::default()).err().unwrap();
    assert!(matches!(neither, ServiceError::BadRequest(_)));
}

#[test]
fn inline_examples_are_numbered() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let examples = (0..6)
        .map(|i| InlineExample {
            content: format!("Example number {i}."),
            input_context: Some(format!("t{i}")),
        })
        .collect();
    let session = store
        .create(&CreateSession {
            goal: Some("write".into()),
            examples: Some(examples),
            ..CreateSession::default()
        })
        .unwrap();
    let state = session.state();
    assert_eq!(state.example_set.examples[5].id.as_str(), "e6");
    assert_eq!(state.example_set.holdout_ids.len(), 1);
}

#[test]
fn dependencies_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    for n in [
        "dimensions:c1",
        "feature_matrix:c1",
        "apply:c1-r0",
        "contrast:c1-r0.g1",
        "iterate:c1-r0",
    ] {
        let err = store.run_node(&id, node(n), None).err().unwrap();
        assert!(matches!(err, ServiceError::DependencyNotMet { .. }), "{n}: {err:?}");
    }
    run(&store, &id, "cluster");
    let err = store.run_node(&id, node("attributes:c1"), None).err().unwrap();
    assert!(matches!(err, ServiceError::DependencyNotMet { .. }));
    let err = store.run_node(&id, node("dimensions:c9"), None).err().unwrap();
    assert!(matches!(err, ServiceError::NotFound(_)));
    assert!(matches!(
        store.run_node("nope", node("cluster"), None),
        Err(ServiceError::SessionNotFound(_))
    ));
}

#[test]
fn session_nodes_match_the_batch_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let clusters = induce_all(&store, &id);
    assert_eq!(clusters.len(), 3);
    apply_and_contrast(&store, &id, &clusters);

    let manifest = IngestManifest::load(&fixture().join("manifest.json"), None).unwrap();
    let set = load_examples(&manifest, &IngestOptions::default()).unwrap();
    let batch = run_pipeline(set, &PipelineConfig::default(), &replay_gateway()).unwrap();

    let state = store.session(&id).unwrap().state();
    for run in &batch.clusters {
        let c = run.cluster.id.as_str();
        assert_eq!(state.clusters[c].revisions[0], run.revisions[0], "{c}");
        let records: Vec<_> = state.records_of(&format!("{c}-r0")).cloned().collect();
        assert_eq!(records.len(), run.records.len());
        for r in &run.records {
            assert_eq!(&state.records[&r.id], r);
        }
    }

    // Accept only the ADD suggestion and iterate the Theoretical cluster.
    let theory = batch
        .clusters
        .iter()
        .find(|c| c.cluster.name == "Theoretical Contributions")
        .unwrap();
    let (record, suggestion) = state
        .reports
        .iter()
        .flat_map(|(r, rep)| rep.suggestions.iter().map(move |s| (r.clone(), s.clone())))
        .find(|(_, s)| s.tag == ImprovementTag::Add && s.id.as_str().starts_with(theory.cluster.id.as_str()))
        .unwrap();
    let updated = store
        .submit_edit(
            &id,
            SessionEdit::Review {
                record: record.clone(),
                suggestion: suggestion.id.clone(),
                action: ReviewAction::Accept,
            },
        )
        .unwrap();
    assert_eq!(updated["suggestions"][0]["status"]["status"], "accepted");
    let again = store.submit_edit(
        &id,
        SessionEdit::Review {
            record: record.clone(),
            suggestion: suggestion.id.clone(),
            action: ReviewAction::Reject,
        },
    );
    assert!(matches!(
        again,
        Err(ServiceError::Stage(schemind_core::StageError::AlreadyReviewed(_)))
    ));

    let r0 = format!("{}-r0", theory.cluster.id);
    run(&store, &id, &format!("iterate:{r0}"));
    let state = store.session(&id).unwrap().state();
    let chain = &state.clusters[theory.cluster.id.as_str()].revisions;
    assert_eq!(chain.len(), 2);
    assert_eq!(chain[1], theory.revisions[1]);
    let diff = diff_revisions(&chain[0], &chain[1]).unwrap();
    assert_eq!(diff.summary().len(), 1);

    let view = schemind_service::store::node_view(&state, &node(&format!("iterate:{r0}")));
    assert_eq!(view["artifact"]["applied"][0], serde_json::json!(suggestion.id));
    assert_eq!(
        view["artifact"]["diff"]["added_attributes"][0]["attribute"]["concise"],
        "Theoretical Integration"
    );

    // Only the latest revision can be iterated.
    let err = store.run_node(&id, node(&format!("iterate:{r0}")), None).err().unwrap();
    assert!(matches!(err, ServiceError::Conflict(_)), "{err:?}");

    run(&store, &id, &format!("align:{record}"));
    let state = store.session(&id).unwrap().state();
    assert!(!state.alignments[&record].fallback);
}

#[test]
fn reopening_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let store = store(dir.path());
        let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
        let clusters = induce_all(&store, &id);
        apply_and_contrast(&store, &id, &clusters[..1]);
        store
            .submit_edit(
                &id,
                SessionEdit::Schema {
                    cluster: clusters[0].as_str().into(),
                    edit: SchemaEdit::RenameDimension {
                        dimension: "d1".into(),
                        name: "Renamed".into(),
                    },
                },
            )
            .unwrap();
        (id.clone(), store.session(&id).unwrap().state())
    };
    let reopened = store(dir.path()).session(&id).unwrap().state();
    assert_eq!(*reopened, *before);
    let bytes = std::fs::read(dir.path().join(&id).join(EVENTS_FILE)).unwrap();
    assert_eq!(fold(&verify(&bytes).unwrap()).unwrap(), *before);
}

#[test]
fn rename_to_focal_community() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let clusters = induce_all(&store, &id);
    let state = store.session(&id).unwrap().state();
    let (cluster, dim) = clusters
        .iter()
        .find_map(|c| {
            let schema = state.latest_schema(c)?;
            schema
                .dimensions
                .iter()
                .find(|d| d.attributes.iter().any(|a| a.concise == "Specific Population"))
                .map(|d| (c.clone(), d.id.clone()))
        })
        .expect("fixture has a Specific Population attribute");
    let schema = store
        .submit_edit(
            &id,
            SessionEdit::Schema {
                cluster: cluster.as_str().into(),
                edit: SchemaEdit::RenameAttribute {
                    scope: dim.to_string(),
                    concise: "Specific Population".into(),
                    new_concise: "Focal Community".into(),
                    new_detailed: None,
                },
            },
        )
        .unwrap();
    let dimension = schema["dimensions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["id"] == dim.as_str())
        .unwrap();
    let labels: Vec<&str> = dimension["attributes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["concise"].as_str().unwrap())
        .collect();
    assert!(
        labels.contains(&"Focal Community") && !labels.contains(&"Specific Population"),
        "{labels:?}"
    );
}

#[test]
fn cluster_edits_drop_stale_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let clusters = induce_all(&store, &id);
    store
        .submit_edit(
            &id,
            SessionEdit::Cluster {
                edit: ClusterEdit::RenameCluster {
                    cluster: clusters[0].as_str().into(),
                    name: "Renamed".into(),
                },
            },
        )
        .unwrap();
    let state = store.session(&id).unwrap().state();
    assert_eq!(state.clusters[clusters[0].as_str()].revisions.len(), 1);

    let moved = state.cluster(&clusters[0]).unwrap().member_ids[0].clone();
    store
        .submit_edit(
            &id,
            SessionEdit::Cluster {
                edit: ClusterEdit::MoveExample {
                    example: moved,
                    from: clusters[0].as_str().into(),
                    to: clusters[1].as_str().into(),
                },
            },
        )
        .unwrap();
    let state = store.session(&id).unwrap().state();
    assert!(!state.clusters.contains_key(clusters[0].as_str()));
    assert!(!state.clusters.contains_key(clusters[1].as_str()));
    assert_eq!(state.clusters[clusters[2].as_str()].revisions.len(), 1);
    assert_eq!(
        state.status(&node(&format!("dimensions:{}", clusters[0]))),
        NodeStatus::Idle
    );
    assert_eq!(
        state.status(&node(&format!("overall:{}", clusters[2]))),
        NodeStatus::Done
    );
}

#[test]
fn rerunning_a_stage_clears_what_depends_on_it() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let clusters = induce_all(&store, &id);
    apply_and_contrast(&store, &id, &clusters[..1]);
    let c = &clusters[0];
    run(&store, &id, &format!("attributes:{c}"));
    let state = store.session(&id).unwrap().state();
    assert!(state.clusters[c.as_str()].revisions.is_empty());
    assert!(state.clusters[c.as_str()].overall.is_none());
    assert!(state.records.is_empty() && state.reports.is_empty());
    assert_eq!(state.status(&node(&format!("overall:{c}"))), NodeStatus::Idle);
    run(&store, &id, &format!("overall:{c}"));
    assert_eq!(
        store.session(&id).unwrap().state().clusters[c.as_str()].revisions.len(),
        1
    );
}

#[test]
fn crash_while_running_reads_as_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let store = store(dir.path());
        store.create(&walkthrough_request()).unwrap().state().id.clone()
    };
    // Simulate a process that died after committing the start event.
    let path = dir.path().join(&id).join(EVENTS_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    let events = verify(&bytes).unwrap();
    let last = events.last().unwrap();
    let (line, _) = encode(
        last.seq + 1,
        &last.hash,
        &EventBody::NodeStarted { node: node("cluster") },
    );
    bytes.extend_from_slice(line.as_bytes());
    std::fs::write(&path, &bytes).unwrap();

    let store = store(dir.path());
    let state = store.session(&id).unwrap().state();
    assert!(matches!(state.status(&node("cluster")), NodeStatus::Failed(_)));
    let events = verify(&std::fs::read(&path).unwrap()).unwrap();
    assert!(matches!(events.last().unwrap().body, EventBody::NodeInterrupted { .. }));
    // The node can be run again afterwards.
    run(&store, &id, "cluster");
}

#[test]
fn failures_are_recorded_and_retryable() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let gateway = Arc::new(
        schemind_core::Gateway::with_transcript(schemind_core::TranscriptMode::Replay(empty), None, Default::default())
            .unwrap(),
    );
    let store = SessionStore::new(dir.path().join("data"), gateway).unwrap();
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let status = store.run_node_blocking(&id, node("cluster"), None).unwrap();
    assert!(
        matches!(status, NodeStatus::Failed(ref e) if e.contains("transcript")),
        "{status:?}"
    );
    let status = store.run_node_blocking(&id, node("cluster"), None).unwrap();
    assert!(matches!(status, NodeStatus::Failed(_)));
}

#[test]
fn edited_review_text_survives_replay() {
    let dir = tempfile::tempdir().unwrap();
    let store = store(dir.path());
    let id = store.create(&walkthrough_request()).unwrap().state().id.clone();
    let clusters = induce_all(&store, &id);
    apply_and_contrast(&store, &id, &clusters);
    let state = store.session(&id).unwrap().state();
    let (record, s) = state
        .reports
        .iter()
        .find_map(|(r, rep)| rep.suggestions.first().map(|s| (r.clone(), s.id.clone())))
        .unwrap();
    store
        .submit_edit(
            &id,
            SessionEdit::Review {
                record: record.clone(),
                suggestion: s.clone(),
                action: ReviewAction::Edit("  tighter wording  ".into()),
            },
        )
        .unwrap();
    let reopened = SessionStore::new(dir.path(), replay_gateway()).unwrap();
    let state = reopened.session(&id).unwrap().state();
    assert_eq!(
        state.reports[&record].suggestion(s.as_str()).unwrap().status,
        ReviewStatus::Edited("tighter wording".into())
    );
}
