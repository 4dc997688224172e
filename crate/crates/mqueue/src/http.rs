//! HTTP surface for external consumers.
//!
//! - `POST /v1/queue/{topic}` raw body → `{"offset": n}`
//! - `GET  /v1/queue/{topic}?group=&max=` → `{"messages": [...]}` (payload base64)
//! - `POST /v1/queue/{topic}/commit` `{"group", "offset"}` → `{"committed": n}`
//! - `POST /v1/queue/{topic}/groups` `{"group", "start"}` → `{"committed": n}`
//! - `GET  /v1/queue` → per-topic stats

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Broker, QueueError, QueueMessage, StartPosition};

impl IntoResponse for QueueError {
    fn into_response(self) -> Response {
        let status = match &self {
            QueueError::InvalidTopic(_)
            | QueueError::InvalidGroup(_)
            | QueueError::OffsetBeyondHead { .. } => StatusCode::BAD_REQUEST,
            QueueError::UnknownGroup { .. } => StatusCode::NOT_FOUND,
            QueueError::DuplicateGroup { .. } => StatusCode::CONFLICT,
            QueueError::StorageFull { .. } | QueueError::Corrupt { .. } | QueueError::Io(_) => {
                StatusCode::SERVICE_UNAVAILABLE
            }
        };
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireMessage {
    pub offset: u64,
    pub payload: String,
    pub enqueued_at: i64,
    pub crc: u32,
}

impl From<QueueMessage> for WireMessage {
    fn from(m: QueueMessage) -> Self {
        WireMessage {
            offset: m.offset,
            payload: B64.encode(&m.payload),
            enqueued_at: m.enqueued_at,
            crc: m.crc,
        }
    }
}

impl WireMessage {
    pub fn decode_payload(&self) -> Option<Vec<u8>> {
        B64.decode(&self.payload).ok()
    }
}

#[derive(Debug, Deserialize)]
struct PollParams {
    group: String,
    #[serde(default = "default_max")]
    max: usize,
}

fn default_max() -> usize {
    100
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommitRequest {
    pub group: String,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub group: String,
    pub start: StartPosition,
}

type Shared = Arc<Broker>;

async fn blocking<T, F>(f: F) -> Result<T, QueueError>
where
    F: FnOnce() -> Result<T, QueueError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| QueueError::Io(std::io::Error::other(e)))?
}

async fn publish(
    State(b): State<Shared>,
    Path(topic): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, QueueError> {
    let offset = blocking(move || b.publish(&topic, &body)).await?;
    Ok(Json(json!({ "offset": offset })))
}

async fn poll(
    State(b): State<Shared>,
    Path(topic): Path<String>,
    Query(p): Query<PollParams>,
) -> Result<Json<serde_json::Value>, QueueError> {
    let msgs = blocking(move || b.poll(&p.group, &topic, p.max)).await?;
    let wire: Vec<WireMessage> = msgs.into_iter().map(Into::into).collect();
    Ok(Json(json!({ "messages": wire })))
}

async fn commit(
    State(b): State<Shared>,
    Path(topic): Path<String>,
    Json(req): Json<CommitRequest>,
) -> Result<Json<serde_json::Value>, QueueError> {
    let committed = blocking(move || b.commit(&req.group, &topic, req.offset)).await?;
    Ok(Json(json!({ "committed": committed })))
}

async fn register(
    State(b): State<Shared>,
    Path(topic): Path<String>,
    Json(req): Json<RegisterRequest>,
) -> Result<Json<serde_json::Value>, QueueError> {
    let committed = blocking(move || b.register_group(&req.group, &topic, req.start)).await?;
    Ok(Json(json!({ "committed": committed })))
}

async fn stats(State(b): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "topics": b.stats() }))
}

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/v1/queue", get(stats))
        .route("/v1/queue/{topic}", post(publish).get(poll))
        .route("/v1/queue/{topic}/commit", post(commit))
        .route("/v1/queue/{topic}/groups", post(register))
        .with_state(broker)
}
