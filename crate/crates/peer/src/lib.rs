//! Runnable peer: UDP transport, real-time audio cycle and the local
//! control API.

pub mod api;
pub mod runtime;

pub use runtime::{SessionError, SessionHandle, SessionOptions, SessionState, SessionStatus, TelemetryFrame};

use std::sync::Arc;

/// Serves the control API until the session leaves the running state.
pub async fn serve(listener: tokio::net::TcpListener, session: Arc<SessionHandle>) -> std::io::Result<()> {
    let app = api::router(session.clone());
    axum::serve(listener, app).with_graceful_shutdown(async move { session.stopping().await }).await
}
