//! Local HTTP control API with JSON bodies.
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with a 4xx status.
//! A rejected request changes nothing.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mevo_core::engine::Control;
use mevo_core::routing::{Bus, Source};
use serde::Deserialize;
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::runtime::{SessionError, SessionHandle, SessionStatus, TelemetryFrame};

type Session = Arc<SessionHandle>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let (status, code) = match &r {
            JsonRejection::JsonSyntaxError(_) => (StatusCode::BAD_REQUEST, "invalid_json"),
            JsonRejection::JsonDataError(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_field"),
            JsonRejection::MissingJsonContentType(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type"),
            _ => (StatusCode::BAD_REQUEST, "invalid_body"),
        };
        Self::new(status, code, r.body_text())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Rejected(inner) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "out_of_range", inner.to_string()),
            SessionError::Stopped => Self::new(StatusCode::CONFLICT, "session_stopped", e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferBody {
    max_target_frames: Option<u32>,
    percentile: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetronomeBody {
    enabled: Option<bool>,
    bpm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoutingBody {
    source: String,
    bus: String,
    gain: f32,
}

pub fn router(session: Session) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/telemetry/latest", get(latest))
        .route("/telemetry/stream", get(stream))
        .route("/buffer", post(buffer))
        .route("/metronome", post(metronome))
        .route("/routing", post(routing))
        .route("/session/stop", post(stop))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(session)
}

async fn status(State(s): State<Session>) -> Result<Json<SessionStatus>, ApiError> {
    Ok(Json(s.status().await?))
}

async fn latest(State(s): State<Session>) -> Result<Json<TelemetryFrame>, ApiError> {
    s.latest()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_ready", "no telemetry period has completed yet"))
}

async fn stream(State(s): State<Session>) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = s
        .subscribe()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "session_stopped", "session is not running"))?;
    let events = BroadcastStream::new(rx)
        .filter_map(|r| r.ok().and_then(|f| Event::default().event("telemetry").json_data(f).ok()))
        .map(Ok);
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn apply(s: &SessionHandle, control: Control) -> Result<Json<SessionStatus>, ApiError> {
    s.apply(control).await?;
    Ok(Json(s.status().await?))
}

fn empty_update() -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_update", "no field to change")
}

async fn buffer(
    State(s): State<Session>,
    body: Result<Json<BufferBody>, JsonRejection>,
) -> Result<Json<SessionStatus>, ApiError> {
    let Json(b) = body?;
    if b.max_target_frames.is_none() && b.percentile.is_none() {
        return Err(empty_update());
    }
    apply(&s, Control::Buffer { max_target_frames: b.max_target_frames, percentile: b.percentile }).await
}

async fn metronome(
    State(s): State<Session>,
    body: Result<Json<MetronomeBody>, JsonRejection>,
) -> Result<Json<SessionStatus>, ApiError> {
    let Json(b) = body?;
    if b.enabled.is_none() && b.bpm.is_none() {
        return Err(empty_update());
    }
    apply(&s, Control::Metronome { enabled: b.enabled, bpm: b.bpm }).await
}

async fn routing(
    State(s): State<Session>,
    body: Result<Json<RoutingBody>, JsonRejection>,
) -> Result<Json<SessionStatus>, ApiError> {
    let Json(b) = body?;
    let invalid = |e: mevo_core::Error| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_field", e.to_string());
    let source: Source = b.source.parse().map_err(invalid)?;
    let bus: Bus = b.bus.parse().map_err(invalid)?;
    apply(&s, Control::Routing { source, bus, gain: b.gain }).await
}

async fn stop(State(s): State<Session>) -> Json<serde_json::Value> {
    s.stop();
    Json(json!({ "state": s.state() }))
}
