//! Axum routes over a [`SessionStore`].

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use schemind_core::refinement::ApplyTargets;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::error::ServiceError;
use crate::node::NodeKey;
use crate::state::SessionEdit;
use crate::store::{node_view, CreateSession, SessionStore};

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::SessionNotFound(_) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::DependencyNotMet { .. } | ServiceError::AlreadyRunning(_) | ServiceError::Conflict(_) => {
                StatusCode::CONFLICT
            }
            ServiceError::Stage(e) if e.is_transport() => StatusCode::BAD_GATEWAY,
            ServiceError::IngestFailed(_) | ServiceError::Stage(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Log(_) | ServiceError::Inconsistent(_) | ServiceError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code(), "message": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(format!("worker failed: {e}")))?
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/nodes/{node}", get(get_node))
        .route("/sessions/{id}/nodes/{node}/run", post(run_node))
        .route("/sessions/{id}/edits", post(submit_edit))
        .route("/sessions/{id}/events", get(events))
        .with_state(store)
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let request = body(payload)?;
    let session = blocking(move || store.create(&request)).await?;
    let state = session.state();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "id": state.id,
            "examples": state.example_set.examples.len(),
            "holdout_ids": state.example_set.holdout_ids,
            "warnings": state.warnings,
        })),
    ))
}

async fn get_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = blocking(move || store.session(&id)).await?;
    Ok(Json(json!(*session.state())))
}

fn parse_node(raw: &str) -> ApiResult<NodeKey> {
    raw.parse()
        .map_err(|e: crate::node::BadNode| ServiceError::BadRequest(e.to_string()))
}

async fn get_node(
    State(store): State<Arc<SessionStore>>,
    Path((id, node)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let node = parse_node(&node)?;
    let session = blocking(move || store.session(&id)).await?;
    Ok(Json(node_view(&session.state(), &node)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    #[serde(default)]
    targets: Option<ApplyTargets>,
}

async fn run_node(
    State(store): State<Arc<SessionStore>>,
    Path((id, node)): Path<(String, String)>,
    payload: Option<Json<RunRequest>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let node = parse_node(&node)?;
    let targets = payload.and_then(|Json(r)| r.targets);
    let handle = blocking(move || store.run_node(&id, node, targets)).await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"node": handle.node, "status": {"state": "running"}})),
    ))
}

async fn submit_edit(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    payload: Result<Json<SessionEdit>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let edit = body(payload)?;
    Ok(Json(blocking(move || store.submit_edit(&id, edit)).await?))
}

async fn events(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let session = blocking(move || store.session(&id)).await?;
    let stream = BroadcastStream::new(session.subscribe()).filter_map(|notice| {
        let notice = notice.ok()?;
        let event = SseEvent::default()
            .event(notice.kind)
            .id(notice.seq.to_string())
            .json_data(&notice)
            .ok()?;
        Some(Ok(event))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
