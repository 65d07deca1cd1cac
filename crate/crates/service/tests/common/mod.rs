#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemind_core::{Gateway, ModelParams, TranscriptMode};
use schemind_service::store::CreateSession;
use schemind_service::{NodeKey, NodeStatus, SessionStore};

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/walkthrough")
}

pub fn replay_gateway() -> Arc<Gateway> {
    Arc::new(
        Gateway::with_transcript(
            TranscriptMode::Replay(fixture().join("transcript.jsonl")),
            None,
            ModelParams::default(),
        )
        .unwrap(),
    )
}

pub fn walkthrough_request() -> CreateSession {
    CreateSession {
        manifest: Some(fixture().join("manifest.json")),
        ..CreateSession::default()
    }
}

pub fn run(store: &SessionStore, id: &str, node: &str) {
    let status = store.run_node_blocking(id, node.parse().unwrap(), None).unwrap();
    assert_eq!(status, NodeStatus::Done, "{node}");
}

/// Clusters, then induces revision 0 for every cluster.
pub fn induce_all(store: &SessionStore, id: &str) -> Vec<String> {
    run(store, id, "cluster");
    let clusters: Vec<String> = store
        .session(id)
        .unwrap()
        .state()
        .clustering
        .as_ref()
        .unwrap()
        .clustering
        .clusters
        .iter()
        .map(|c| c.id.to_string())
        .collect();
    for c in &clusters {
        for stage in ["feature_matrix", "dimensions", "attributes", "overall"] {
            run(store, id, &format!("{stage}:{c}"));
        }
    }
    clusters
}

/// Applies revision 0 of every cluster and contrasts each generation.
pub fn apply_and_contrast(store: &SessionStore, id: &str, clusters: &[String]) {
    for c in clusters {
        run(store, id, &format!("apply:{c}-r0"));
        let records: Vec<String> = store
            .session(id)
            .unwrap()
            .state()
            .records_of(&format!("{c}-r0"))
            .map(|r| r.id.to_string())
            .collect();
        for r in records {
            run(store, id, &format!("contrast:{r}"));
        }
    }
}

pub fn node(s: &str) -> NodeKey {
    s.parse().unwrap()
}

/// Scripted model that blocks every call while its gate is closed.
#[derive(Default)]
pub struct GatedModel {
    closed: std::sync::Mutex<bool>,
    opened: std::sync::Condvar,
}

impl GatedModel {
    pub fn close(&self) {
        *self.closed.lock().unwrap() = true;
    }

    pub fn open(&self) {
        *self.closed.lock().unwrap() = false;
        self.opened.notify_all();
    }
}

impl schemind_core::gateway::ChatBackend for GatedModel {
    fn complete(&self, request: &schemind_core::gateway::ChatRequest) -> Result<String, schemind_core::GatewayError> {
        let mut closed = self.closed.lock().unwrap();
        while *closed {
            closed = self.opened.wait(closed).unwrap();
        }
        drop(closed);
        schemind_core::testkit::ScriptedModel.complete(request)
    }
}

pub fn gated_store(dir: &Path) -> (SessionStore, Arc<GatedModel>) {
    let model = Arc::new(GatedModel::default());
    let gateway = Arc::new(Gateway::live(model.clone(), ModelParams::default()));
    (SessionStore::new(dir, gateway).unwrap(), model)
}
