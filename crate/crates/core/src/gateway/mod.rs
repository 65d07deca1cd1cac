//! Model gateway: prompt rendering, chat-completion calls, structured
//! response repair, and transcript record/replay.
//!
//! A [`Gateway`] wraps a [`ChatBackend`] (the HTTP endpoint in production, a
//! scripted backend in tests) and optionally a transcript. In replay mode no
//! backend is needed and every request is answered by fingerprint lookup.

mod http;
mod repair;
mod templates;
mod transcript;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, API_KEY_ENV};
pub use repair::{extract_first_object, parse_object, strip_code_fences};
pub use templates::{render_prompt, PromptTemplate, TemplateError, TemplateId};
pub use transcript::{Transcript, TranscriptEntry, TranscriptWriter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not parse response: {reason}")]
    ParseFailed { reason: String, raw: String },
    #[error("call budget of {0} exhausted")]
    BudgetExceeded(usize),
    #[error("no transcript entry for fingerprint {0}")]
    TranscriptMiss(String),
    #[error("transcript is corrupt: {0}")]
    TranscriptCorrupt(String),
    #[error("transcript i/o: {0}")]
    Io(String),
}

impl GatewayError {
    /// Errors that originate in the endpoint or transcript layer rather
    /// than in the content of a response.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport(_)
                | GatewayError::BudgetExceeded(_)
                | GatewayError::TranscriptMiss(_)
                | GatewayError::TranscriptCorrupt(_)
                | GatewayError::Io(_)
        )
    }
}

/// Model parameters. These are configuration and part of every fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            model: "gpt-4o".to_string(),
            temperature: Some(0.0),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttachmentKind {
    Image,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub media_type: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Template id (or media task name) recorded alongside the response.
    pub tag: String,
    pub prompt: String,
    pub attachments: Vec<Attachment>,
    pub params: ModelParams,
}

impl ChatRequest {
    /// Hash of (tag, rendered prompt, model parameters, attachment digests).
    pub fn fingerprint(&self) -> String {
        let attachments: Vec<(AttachmentKind, &str, String)> = self
            .attachments
            .iter()
            .map(|a| (a.kind, a.media_type.as_str(), hex::encode(Sha256::digest(&a.data))))
            .collect();
        let canonical =
            serde_json::to_string(&(&self.tag, &self.prompt, &self.params, attachments)).expect("request serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// A chat-completion endpoint.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    /// A JSON object that must carry these top-level keys.
    StructuredObject(Vec<String>),
    /// The clustering prompt's line-oriented `Cluster <k>: <name>` format.
    ClusterProse,
    FreeText,
}

impl ResponseFormat {
    pub fn object(keys: &[&str]) -> Self {
        ResponseFormat::StructuredObject(keys.iter().map(|k| k.to_string()).collect())
    }

    /// One-line restatement of the expected format, used in re-asks.
    pub fn reminder(&self) -> String {
        match self {
            ResponseFormat::StructuredObject(keys) => format!(
                "Return only a valid JSON object with the top-level keys: {}.",
                keys.join(", ")
            ),
            ResponseFormat::ClusterProse => {
                "Follow the Response Format exactly: start each cluster with a line \"Cluster <number>: <name>\"."
                    .to_string()
            }
            ResponseFormat::FreeText => "Respond with non-empty text.".to_string(),
        }
    }

    fn check(&self, raw: &str) -> Result<Parsed, String> {
        match self {
            ResponseFormat::StructuredObject(keys) => {
                let obj = parse_object(raw)?;
                let missing: Vec<&str> = keys
                    .iter()
                    .filter(|k| !obj.contains_key(k.as_str()))
                    .map(|k| k.as_str())
                    .collect();
                if missing.is_empty() {
                    Ok(Parsed::Object(obj))
                } else {
                    Err(format!("missing expected key(s): {}", missing.join(", ")))
                }
            }
            ResponseFormat::ClusterProse => {
                let has_header = raw.lines().any(|l| {
                    l.trim_start_matches(|c: char| c == '#' || c == '*' || c.is_whitespace())
                        .to_ascii_lowercase()
                        .starts_with("cluster ")
                });
                if has_header {
                    Ok(Parsed::Text(raw.to_string()))
                } else {
                    Err("no \"Cluster <k>: <name>\" section found".to_string())
                }
            }
            ResponseFormat::FreeText => {
                if raw.trim().is_empty() {
                    Err("empty response".to_string())
                } else {
                    Ok(Parsed::Text(raw.to_string()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Object(Map<String, Value>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub parsed: Parsed,
    pub raw: String,
    /// Number of model calls spent, including re-asks.
    pub calls: usize,
}

impl Completion {
    pub fn object(&self) -> Option<&Map<String, Value>> {
        match &self.parsed {
            Parsed::Object(o) => Some(o),
            Parsed::Text(_) => None,
        }
    }

    pub fn text(&self) -> &str {
        match &self.parsed {
            Parsed::Text(t) => t,
            Parsed::Object(_) => &self.raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Re-asks allowed after local repairs fail.
    pub max_repairs: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_repairs: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriptMode {
    Live,
    Record(PathBuf),
    Replay(PathBuf),
}

enum Store {
    None,
    Record(Mutex<TranscriptWriter>),
    Replay(Transcript),
}

/// Shared handle to the model endpoint.
pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    params: ModelParams,
    store: Store,
    policy: RetryPolicy,
    budget: Option<usize>,
    calls: AtomicUsize,
    live_calls: AtomicUsize,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("params", &self.params)
            .field("policy", &self.policy)
            .field("calls", &self.calls.load(Ordering::Relaxed))
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway for `mode`. Live and record modes need a backend;
    /// replay never touches one.
    pub fn with_transcript(
        mode: TranscriptMode,
        backend: Option<Arc<dyn ChatBackend>>,
        params: ModelParams,
    ) -> Result<Self, GatewayError> {
        let store = match &mode {
            TranscriptMode::Live => Store::None,
            TranscriptMode::Record(path) => Store::Record(Mutex::new(TranscriptWriter::open(path)?)),
            TranscriptMode::Replay(path) => Store::Replay(Transcript::load(path)?),
        };
        if backend.is_none() && !matches!(mode, TranscriptMode::Replay(_)) {
            return Err(GatewayError::Transport("no chat backend configured".to_string()));
        }
        Ok(Gateway {
            backend,
            params,
            store,
            policy: RetryPolicy::default(),
            budget: None,
            calls: AtomicUsize::new(0),
            live_calls: AtomicUsize::new(0),
            max_in_flight: 4,
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
        })
    }

    pub fn live(backend: Arc<dyn ChatBackend>, params: ModelParams) -> Self {
        Self::with_transcript(TranscriptMode::Live, Some(backend), params).expect("live gateway")
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Caps the total number of model calls (replayed calls included).
    pub fn with_budget(mut self, max_calls: usize) -> Self {
        self.budget = Some(max_calls);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy(&self) -> RetryPolicy {
        self.policy
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Calls that actually reached the backend.
    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }

    pub fn request(&self, tag: &str, prompt: &str) -> ChatRequest {
        ChatRequest {
            tag: tag.to_string(),
            prompt: prompt.to_string(),
            attachments: Vec::new(),
            params: self.params.clone(),
        }
    }

    /// One raw exchange, served from the transcript when possible.
    pub fn send(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(budget) = self.budget {
            if n >= budget {
                return Err(GatewayError::BudgetExceeded(budget));
            }
        }
        let fingerprint = request.fingerprint();
        match &self.store {
            Store::Replay(t) => t
                .get(&fingerprint)
                .map(|e| e.response.clone())
                .ok_or(GatewayError::TranscriptMiss(fingerprint)),
            Store::Record(writer) => {
                if let Some(hit) = writer.lock().expect("transcript lock").get(&fingerprint) {
                    return Ok(hit.response.clone());
                }
                let response = self.call_backend(request)?;
                writer.lock().expect("transcript lock").append(TranscriptEntry {
                    fingerprint,
                    template_id: request.tag.clone(),
                    response: response.clone(),
                })?;
                Ok(response)
            }
            Store::None => self.call_backend(request),
        }
    }

    fn call_backend(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| GatewayError::Transport("no chat backend configured".to_string()))?;
        {
            let mut busy = self.in_flight.lock().expect("in-flight lock");
            while *busy >= self.max_in_flight {
                busy = self.slot_free.wait(busy).expect("in-flight lock");
            }
            *busy += 1;
        }
        let result = backend.complete(request);
        *self.in_flight.lock().expect("in-flight lock") -= 1;
        self.slot_free.notify_one();
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        result
    }

    /// Sends a rendered prompt and parses the answer against `format`.
    ///
    /// Local repairs (fence stripping, first-object extraction) are tried
    /// first; then up to `max_repairs` re-asks that append the parse error
    /// and a format reminder.
    pub fn complete_structured(
        &self,
        tag: &str,
        prompt: &str,
        format: &ResponseFormat,
    ) -> Result<Completion, GatewayError> {
        self.complete_with_policy(tag, prompt, format, self.policy)
    }

    pub fn complete_with_policy(
        &self,
        tag: &str,
        prompt: &str,
        format: &ResponseFormat,
        policy: RetryPolicy,
    ) -> Result<Completion, GatewayError> {
        let mut current = prompt.to_string();
        let mut calls = 0;
        loop {
            let raw = self.send(&self.request(tag, &current))?;
            calls += 1;
            match format.check(&raw) {
                Ok(parsed) => return Ok(Completion { parsed, raw, calls }),
                Err(reason) => {
                    if calls > policy.max_repairs {
                        return Err(GatewayError::ParseFailed { reason, raw });
                    }
                    tracing::debug!(tag, %reason, "re-asking after unusable response");
                    current = corrective_prompt(prompt, &reason, &format.reminder());
                }
            }
        }
    }
}

/// The original prompt followed by what was wrong with the last answer.
pub fn corrective_prompt(prompt: &str, problem: &str, reminder: &str) -> String {
    format!("{prompt}\n\nYour previous response could not be used: {problem}\n{reminder}")
}

/// Renders `id` with `bindings`.
pub fn render(id: TemplateId, bindings: &[(&'static str, String)]) -> Result<String, TemplateError> {
    let map = bindings.iter().cloned().collect();
    render_prompt(&PromptTemplate::get(id), &map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex as StdMutex;

    struct Canned(StdMutex<Vec<String>>);

    impl ChatBackend for Canned {
        fn complete(&self, _request: &ChatRequest) -> Result<String, GatewayError> {
            let mut v = self.0.lock().unwrap();
            if v.is_empty() {
                return Err(GatewayError::Transport("exhausted".into()));
            }
            Ok(v.remove(0))
        }
    }

    fn gateway(responses: &[&str]) -> Gateway {
        let backend = Canned(StdMutex::new(responses.iter().map(|s| s.to_string()).collect()));
        Gateway::live(Arc::new(backend), ModelParams::default())
    }

    #[test]
    fn fenced_response_parses_without_reask() {
        let g = gateway(&["```json\n{\"mapping\": []}\n```"]);
        let c = g
            .complete_structured("feature_matrix", "p", &ResponseFormat::object(&["mapping"]))
            .unwrap();
        assert_eq!(c.calls, 1);
        assert!(c.object().unwrap().contains_key("mapping"));
    }

    #[test]
    fn preamble_response_parses() {
        let g = gateway(&["Sure! Here is the JSON: {\"mapping\": [1]}"]);
        let c = g
            .complete_structured("feature_matrix", "p", &ResponseFormat::object(&["mapping"]))
            .unwrap();
        assert_eq!(c.calls, 1);
    }

    #[test]
    fn reasks_then_fails_with_raw_text() {
        let g = gateway(&["{\"x\": 1}", "{\"y\": 2}", "{\"z\": 3}"]);
        let err = g
            .complete_structured("feature_matrix", "p", &ResponseFormat::object(&["mapping"]))
            .unwrap_err();
        match err {
            GatewayError::ParseFailed { raw, reason } => {
                assert_eq!(raw, "{\"z\": 3}");
                assert!(reason.contains("mapping"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.calls(), 3);
    }

    #[test]
    fn reask_recovers() {
        let g = gateway(&["not json", "{\"mapping\": []}"]);
        let c = g
            .complete_structured("feature_matrix", "p", &ResponseFormat::object(&["mapping"]))
            .unwrap();
        assert_eq!(c.calls, 2);
    }

    #[test]
    fn zero_repairs_fails_immediately() {
        let g = gateway(&["nope", "{\"mapping\": []}"]).with_policy(RetryPolicy { max_repairs: 0 });
        assert!(g
            .complete_structured("t", "p", &ResponseFormat::object(&["mapping"]))
            .is_err());
        assert_eq!(g.calls(), 1);
    }

    #[test]
    fn budget_is_enforced() {
        let g = gateway(&["a", "b"]).with_budget(1);
        assert!(g.send(&g.request("t", "p")).is_ok());
        assert_eq!(g.send(&g.request("t", "p")), Err(GatewayError::BudgetExceeded(1)));
    }

    #[test]
    fn fingerprint_depends_on_params_and_prompt() {
        let g = gateway(&[]);
        let a = g.request("t", "p");
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.params.temperature = Some(0.7);
        assert_ne!(a.fingerprint(), b.fingerprint());
        let c = g.request("t", "q");
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let backend = Arc::new(Canned(StdMutex::new(vec!["one".into(), "two".into()])));
        let rec = Gateway::with_transcript(
            TranscriptMode::Record(path.clone()),
            Some(backend),
            ModelParams::default(),
        )
        .unwrap();
        assert_eq!(rec.send(&rec.request("t", "p1")).unwrap(), "one");
        assert_eq!(rec.send(&rec.request("t", "p2")).unwrap(), "two");
        // repeated prompt is a cache hit, not a live call
        assert_eq!(rec.send(&rec.request("t", "p1")).unwrap(), "one");
        assert_eq!(rec.live_calls(), 2);
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, 2);

        let rep = Gateway::with_transcript(TranscriptMode::Replay(path), None, ModelParams::default()).unwrap();
        assert_eq!(rep.send(&rep.request("t", "p2")).unwrap(), "two");
        assert!(matches!(
            rep.send(&rep.request("t", "unseen")),
            Err(GatewayError::TranscriptMiss(_))
        ));
        assert_eq!(rep.live_calls(), 0);
    }

    #[test]
    fn corrupt_transcript_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"fingerprint\": \"a\"}\n").unwrap();
        let err = Gateway::with_transcript(TranscriptMode::Replay(path), None, ModelParams::default()).unwrap_err();
        assert!(matches!(err, GatewayError::TranscriptCorrupt(_)));
    }
}
