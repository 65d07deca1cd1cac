//! Session persistence and the single-writer commit path.
//!
//! One directory per session holds `events.jsonl`, the source of truth, and
//! `state.json`, a snapshot for inspection written after each commit that
//! changes an artifact. Loading always replays the log.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;

use schemind_core::diff::diff_revisions;
use schemind_core::ingest::{load_examples, normalize_text, IngestManifest, IngestOptions};
use schemind_core::refinement::ApplyTargets;
use schemind_core::{new_example_set, split_validation, Example, Gateway, StageError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::error::ServiceError;
use crate::events::{Event, EventLog};
use crate::jobs::{applied_suggestions, execute};
use crate::node::{NodeKey, NodeStatus};
use crate::state::{fold, node_cluster, record_schema_id, EventBody, SessionConfig, SessionEdit, SessionState};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineExample {
    pub content: String,
    #[serde(default)]
    pub input_context: Option<String>,
}

/// Body of `POST /sessions`: a manifest path or inline text examples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub goal: Option<String>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub examples: Option<Vec<InlineExample>>,
    #[serde(default)]
    pub config: SessionConfig,
}

/// Progress notice sent to event-stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventNotice {
    pub seq: u64,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<NodeStatus>,
}

impl EventNotice {
    fn new(event: &Event, state: &SessionState) -> Self {
        let node = event.body.node().cloned();
        EventNotice {
            seq: event.seq,
            kind: event.body.kind(),
            status: node.as_ref().map(|n| state.status(n)),
            node,
        }
    }
}

pub struct Session {
    dir: PathBuf,
    writer: Mutex<EventLog>,
    snapshot: RwLock<Arc<SessionState>>,
    notices: broadcast::Sender<EventNotice>,
}

impl Session {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Current state. Never blocks on a running job.
    pub fn state(&self) -> Arc<SessionState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventNotice> {
        self.notices.subscribe()
    }

    fn lock(&self) -> MutexGuard<'_, EventLog> {
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Validates `body` against the current state, then appends it.
    fn commit(&self, log: &mut EventLog, body: EventBody) -> Result<Arc<SessionState>, ServiceError> {
        let mut next = (*self.state()).clone();
        next.apply(&body)?;
        let snapshot_worthy = !matches!(body, EventBody::NodeStarted { .. });
        let event = log.append(body)?;
        let next = Arc::new(next);
        *self.snapshot.write().expect("snapshot lock") = next.clone();
        if snapshot_worthy {
            if let Err(e) = write_snapshot(&self.dir, &next, &event) {
                tracing::warn!("state snapshot not written: {e}");
            }
        }
        let _ = self.notices.send(EventNotice::new(&event, &next));
        Ok(next)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_snapshot(dir: &Path, state: &SessionState, event: &Event) -> std::io::Result<()> {
    let doc = json!({"seq": event.seq, "head": event.hash, "state": state});
    write_atomic(&dir.join(STATE_FILE), serde_json::to_string_pretty(&doc)?.as_bytes())
}

/// A started node. Dropping the handle detaches the job.
pub struct JobHandle {
    pub node: NodeKey,
    thread: JoinHandle<NodeStatus>,
}

impl JobHandle {
    pub fn wait(self) -> NodeStatus {
        self.thread
            .join()
            .unwrap_or_else(|_| NodeStatus::Failed("job thread panicked".into()))
    }
}

fn stage_of_node(node: &NodeKey) -> bool {
    matches!(
        node,
        NodeKey::FeatureMatrix(_) | NodeKey::Dimensions(_) | NodeKey::Attributes(_) | NodeKey::Overall(_)
    )
}

fn schema_scope(node: &NodeKey) -> Option<&str> {
    match node {
        NodeKey::Apply(s) | NodeKey::Iterate(s) => Some(s.as_str()),
        NodeKey::Contrast(r) | NodeKey::Align(r) => Some(record_schema_id(r.as_str())),
        _ => None,
    }
}

/// Whether two nodes may not run at the same time.
pub fn conflicts(a: &NodeKey, b: &NodeKey) -> bool {
    if a == b || *a == NodeKey::Cluster || *b == NodeKey::Cluster {
        return true;
    }
    if node_cluster(a) != node_cluster(b) {
        return false;
    }
    if stage_of_node(a) || stage_of_node(b) {
        return true;
    }
    if schema_scope(a) != schema_scope(b) {
        return false;
    }
    matches!(a, NodeKey::Apply(_) | NodeKey::Iterate(_)) || matches!(b, NodeKey::Apply(_) | NodeKey::Iterate(_))
}

/// Checks the dependency rule for `node`.
pub fn check_ready(state: &SessionState, node: &NodeKey) -> Result<(), ServiceError> {
    let needs = |what: String| ServiceError::DependencyNotMet {
        node: node.clone(),
        needs: what,
    };
    let cluster_done = |c: &str| -> Result<(), ServiceError> {
        if !state.is_done(&NodeKey::Cluster) {
            return Err(needs(NodeKey::Cluster.to_string()));
        }
        state
            .cluster(c)
            .map(|_| ())
            .ok_or_else(|| ServiceError::NotFound(format!("cluster {c}")))
    };
    match node {
        NodeKey::Cluster => Ok(()),
        NodeKey::FeatureMatrix(c) | NodeKey::Dimensions(c) => cluster_done(c.as_str()),
        NodeKey::Attributes(c) => {
            cluster_done(c.as_str())?;
            let dep = NodeKey::Dimensions(c.clone());
            state.is_done(&dep).then_some(()).ok_or_else(|| needs(dep.to_string()))
        }
        NodeKey::Overall(c) => {
            cluster_done(c.as_str())?;
            let dep = NodeKey::Attributes(c.clone());
            state.is_done(&dep).then_some(()).ok_or_else(|| needs(dep.to_string()))
        }
        NodeKey::Apply(s) => state
            .schema(s.as_str())
            .map(|_| ())
            .ok_or_else(|| needs(format!("schema {s}"))),
        NodeKey::Contrast(r) | NodeKey::Align(r) => state
            .records
            .contains_key(r)
            .then_some(())
            .ok_or_else(|| needs(format!("generation {r}"))),
        NodeKey::Iterate(s) => {
            let schema = state.schema(s.as_str()).ok_or_else(|| needs(format!("schema {s}")))?;
            let latest = state
                .latest_schema(schema.cluster_id.as_str())
                .expect("schema has a chain");
            if latest.id != *s {
                return Err(ServiceError::Conflict(format!(
                    "{s} is not the latest revision ({})",
                    latest.id
                )));
            }
            if applied_suggestions(state, s.as_str()).is_empty() {
                return Err(ServiceError::Stage(StageError::NothingToApply));
            }
            Ok(())
        }
    }
}

/// Nodes whose running state blocks `edit`.
fn edit_blockers<'a>(state: &'a SessionState, edit: &SessionEdit) -> Vec<&'a NodeKey> {
    state
        .running()
        .filter(|n| match edit {
            SessionEdit::Cluster { .. } => true,
            SessionEdit::Schema { cluster, .. } => node_cluster(n) == Some(cluster.as_str()),
            SessionEdit::Review { record, .. } => {
                **n == NodeKey::Contrast(record.clone())
                    || **n == NodeKey::Iterate(record_schema_id(record.as_str()).into())
            }
        })
        .collect()
}

/// Artifact of one node with its status, as served by the API.
pub fn node_view(state: &SessionState, node: &NodeKey) -> Value {
    let status = state.status(node);
    let artifact = match node {
        NodeKey::Cluster => json!(state.clustering),
        NodeKey::FeatureMatrix(c) => json!(state.clusters.get(c).and_then(|s| s.feature_matrix.as_ref())),
        NodeKey::Dimensions(c) => json!(state.clusters.get(c).and_then(|s| s.dimensions.as_ref())),
        NodeKey::Attributes(c) => json!(state.clusters.get(c).and_then(|s| s.attributes.as_ref())),
        NodeKey::Overall(c) => json!(state.clusters.get(c).and_then(|s| s.overall.as_ref())),
        NodeKey::Apply(s) => json!(state.records_of(s.as_str()).collect::<Vec<_>>()),
        NodeKey::Contrast(r) => json!(state.reports.get(r)),
        NodeKey::Align(r) => json!(state.alignments.get(r)),
        NodeKey::Iterate(s) => {
            let parent = state.schema(s.as_str());
            let child = state
                .clusters
                .get(crate::state::schema_cluster_id(s.as_str()))
                .and_then(|cs| {
                    cs.revisions
                        .iter()
                        .find(|r| r.parent.as_ref() == Some(s))
                        .map(|r| (cs, r))
                });
            match (parent, child) {
                (Some(p), Some((cs, c))) => json!({
                    "schema": c,
                    "applied": cs.applied.get(&c.id),
                    "diff": diff_revisions(p, c).ok(),
                }),
                _ => Value::Null,
            }
        }
    };
    json!({"node": node, "status": status, "artifact": artifact})
}

/// All sessions under one data directory, sharing one gateway.
pub struct SessionStore {
    root: PathBuf,
    gateway: Arc<Gateway>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>, gateway: Arc<Gateway>) -> Result<Self, ServiceError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| ServiceError::Io(format!("{}: {e}", root.display())))?;
        Ok(SessionStore {
            root,
            gateway,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self, request: &CreateSession) -> Result<Arc<Session>, ServiceError> {
        let set = match (&request.manifest, &request.examples) {
            (Some(path), None) => {
                let manifest = IngestManifest::load(path, request.goal.as_deref())
                    .map_err(|e| ServiceError::IngestFailed(e.into()))?;
                let options = IngestOptions {
                    gateway: Some(&self.gateway),
                    ..IngestOptions::default()
                };
                load_examples(&manifest, &options).map_err(ServiceError::IngestFailed)?
            }
            (None, Some(examples)) => {
                let examples = examples
                    .iter()
                    .enumerate()
                    .map(|(i, e)| Example {
                        input_context: e.input_context.as_deref().map(normalize_text),
                        ..Example::text(format!("e{}", i + 1), normalize_text(&e.content))
                    })
                    .collect();
                new_example_set(request.goal.clone().unwrap_or_default(), examples)
                    .map_err(|e| ServiceError::IngestFailed(e.into()))?
            }
            _ => {
                return Err(ServiceError::BadRequest(
                    "give exactly one of manifest or examples".into(),
                ))
            }
        };
        let split = split_validation(&set, request.config.holdout_ratio, request.config.seed)
            .map_err(|e| ServiceError::IngestFailed(e.into()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let io = |e: std::io::Error| ServiceError::Io(e.to_string());
        // Built aside and renamed in, so no session directory ever lacks its first event.
        let staging = tempfile::Builder::new()
            .prefix(".creating-")
            .tempdir_in(&self.root)
            .map_err(io)?;
        let mut log = EventLog::create(&staging.path().join(EVENTS_FILE))?;
        let body = EventBody::SessionCreated {
            id: id.clone(),
            config: request.config,
            example_set: split.set,
            warnings: split.warning.into_iter().collect(),
        };
        let state = SessionState::genesis(&body)?;
        let event = log.append(body)?;
        write_snapshot(staging.path(), &state, &event).map_err(io)?;
        drop(log);
        let dir = self.root.join(&id);
        std::fs::rename(staging.keep(), &dir).map_err(io)?;
        let (log, _, _) = EventLog::open(&dir.join(EVENTS_FILE))?;
        let session = Arc::new(Session {
            dir,
            writer: Mutex::new(log),
            snapshot: RwLock::new(Arc::new(state)),
            notices: broadcast::channel(256).0,
        });
        self.sessions.lock().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }

    /// Returns a cached session or loads it from disk. Nodes left running
    /// by a previous process are marked failed with an interruption event.
    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        let mut sessions = self.sessions.lock().expect("sessions lock");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(ServiceError::SessionNotFound(id.to_string()));
        }
        let dir = self.root.join(id);
        let path = dir.join(EVENTS_FILE);
        if !path.exists() {
            return Err(ServiceError::SessionNotFound(id.to_string()));
        }
        let session = Arc::new(open_session(&dir)?);
        sessions.insert(id.to_string(), session.clone());
        Ok(session)
    }

    /// Starts `node` on a background thread.
    pub fn run_node(&self, id: &str, node: NodeKey, targets: Option<ApplyTargets>) -> Result<JobHandle, ServiceError> {
        let session = self.session(id)?;
        let mut log = session.lock();
        let state = session.state();
        if state.status(&node) == NodeStatus::Running {
            return Err(ServiceError::AlreadyRunning(node));
        }
        if let Some(other) = state.running().find(|r| conflicts(r, &node)) {
            return Err(ServiceError::Conflict(format!("{other} is running")));
        }
        check_ready(&state, &node)?;
        if targets.is_some() && !matches!(node, NodeKey::Apply(_)) {
            return Err(ServiceError::BadRequest("targets only apply to apply nodes".into()));
        }
        let snapshot = session.commit(&mut log, EventBody::NodeStarted { node: node.clone() })?;
        drop(log);
        let gateway = self.gateway.clone();
        let job_node = node.clone();
        let thread = std::thread::spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(|| execute(&job_node, &snapshot, targets, &gateway)))
                .unwrap_or_else(|_| Err(StageError::Precondition("node panicked".into())));
            let mut log = session.lock();
            let outcome = match result {
                Ok(artifact) => session.commit(
                    &mut log,
                    EventBody::NodeCompleted {
                        node: job_node.clone(),
                        artifact,
                    },
                ),
                Err(e) => Err(ServiceError::Stage(e)),
            };
            if let Err(e) = outcome {
                tracing::warn!("{job_node} failed: {e}");
                let failed = EventBody::NodeFailed {
                    node: job_node.clone(),
                    error: e.to_string(),
                };
                if let Err(e) = session.commit(&mut log, failed) {
                    tracing::error!("{job_node}: failure not recorded: {e}");
                }
            }
            session.state().status(&job_node)
        });
        Ok(JobHandle { node, thread })
    }

    /// Runs `node` and waits for it.
    pub fn run_node_blocking(
        &self,
        id: &str,
        node: NodeKey,
        targets: Option<ApplyTargets>,
    ) -> Result<NodeStatus, ServiceError> {
        Ok(self.run_node(id, node, targets)?.wait())
    }

    /// Validates and commits one edit, returning the updated artifact.
    pub fn submit_edit(&self, id: &str, edit: SessionEdit) -> Result<Value, ServiceError> {
        let session = self.session(id)?;
        let mut log = session.lock();
        let state = session.state();
        if let Some(n) = edit_blockers(&state, &edit).first() {
            return Err(ServiceError::Conflict(format!("{n} is running")));
        }
        if matches!(edit, SessionEdit::Cluster { .. }) && !state.is_done(&NodeKey::Cluster) {
            return Err(ServiceError::DependencyNotMet {
                node: NodeKey::Cluster,
                needs: NodeKey::Cluster.to_string(),
            });
        }
        let state = session.commit(&mut log, EventBody::EditCommitted { edit: edit.clone() })?;
        Ok(match &edit {
            SessionEdit::Cluster { .. } => json!(state.clustering.as_ref().map(|c| &c.clustering)),
            SessionEdit::Schema { cluster, .. } => json!(state.latest_schema(cluster.as_str())),
            SessionEdit::Review { record, .. } => json!(state.reports.get(record)),
        })
    }
}

/// Loads a session directory, recording interruptions of nodes that were
/// running when the log ends.
pub fn open_session(dir: &Path) -> Result<Session, ServiceError> {
    let (log, events, warning) = EventLog::open(&dir.join(EVENTS_FILE))?;
    if let Some(w) = warning {
        tracing::warn!("{}: {w}", dir.display());
    }
    let state = fold(&events)?;
    let interrupted: Vec<NodeKey> = state.running().cloned().collect();
    let session = Session {
        dir: dir.to_path_buf(),
        writer: Mutex::new(log),
        snapshot: RwLock::new(Arc::new(state)),
        notices: broadcast::channel(256).0,
    };
    {
        let mut log = session.lock();
        for node in interrupted {
            session.commit(&mut log, EventBody::NodeInterrupted { node })?;
        }
    }
    Ok(session)
}
