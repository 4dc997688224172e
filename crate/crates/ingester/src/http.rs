//! `POST /v1/batch` (gzip or plain JSON body) and `GET /v1/ingest/stats`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::{IngestError, Ingester};

fn is_gzip(headers: &HeaderMap) -> bool {
    headers
        .get("content-encoding")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("gzip"))
}

fn error_response(e: IngestError) -> Response {
    let status = match &e {
        e if e.is_retryable() => StatusCode::SERVICE_UNAVAILABLE,
        IngestError::HookOutput { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    let mut body = json!({"error": e.to_string()});
    if let Some(i) = e.record_index() {
        body["index"] = json!(i);
    }
    (status, Json(body)).into_response()
}

async fn batch(State(ing): State<Arc<Ingester>>, headers: HeaderMap, body: Bytes) -> Response {
    let gz = is_gzip(&headers);
    let result = tokio::task::spawn_blocking(move || {
        if gz {
            ing.receive_batch(&body)
        } else {
            ing.receive_json(&body)
        }
    })
    .await;
    match result {
        Ok(Ok(ack)) => Json(ack).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": e.to_string()}))).into_response(),
    }
}

async fn stats(State(ing): State<Arc<Ingester>>) -> Response {
    Json(json!({"stats": ing.stats(), "available": ing.is_available()})).into_response()
}

pub fn router(ingester: Arc<Ingester>) -> Router {
    Router::new()
        .route("/v1/batch", post(batch))
        .route("/v1/ingest/stats", get(stats))
        .with_state(ingester)
}
