//! Schema-induction sessions: an event-sourced store of pipeline artifacts
//! with a node graph that can be run, re-run and edited over HTTP.

mod error;
pub mod events;
pub mod http;
mod jobs;
pub mod node;
pub mod state;
pub mod store;

pub use error::ServiceError;
pub use http::router;
pub use node::{NodeKey, NodeStatus};
pub use state::{SessionConfig, SessionEdit, SessionState};
pub use store::{open_session, CreateSession, Session, SessionStore};

/// Serves the API on `addr` until the process stops.
pub async fn serve(store: std::sync::Arc<SessionStore>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
