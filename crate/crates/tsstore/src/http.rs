//! HTTP routes for the store.
//!
//! - `POST /v1/query` `{"sql": "..."}` → `{"columns": [...], "rows": [[...]]}`
//! - `POST /v1/query/parse` `{"sql": "..."}` → `{"query": {...}, "canonical": "..."}`
//! - `POST /v1/logs/query` log filter → `{"events": [...]}`
//! - `POST /v1/points`, `POST /v1/logs` direct writes
//! - `GET /v1/store/stats`
//! - `GET|POST /v1/panels`, `DELETE /v1/panels/{id}` saved dashboard panels

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{LogEvent, LogFilter, MetricPoint, QueryError, Store, StoreError};

const PANELS_NS: &str = "panels";

pub struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Query(QueryError::Parse(p)) => ApiError(
                StatusCode::BAD_REQUEST,
                json!({"error": p.to_string(), "column": p.column}),
            ),
            StoreError::Query(q) => ApiError(StatusCode::BAD_REQUEST, json!({"error": q.to_string()})),
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": other.to_string()})),
        }
    }
}

#[derive(Deserialize)]
struct SqlBody {
    sql: String,
}

async fn query(State(s): State<Arc<Store>>, Json(b): Json<SqlBody>) -> Result<Json<Value>, ApiError> {
    let r = tokio::task::spawn_blocking(move || s.query_sql(&b.sql))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": e.to_string()})))??;
    Ok(Json(json!({"columns": r.columns, "rows": r.json_rows()})))
}

async fn parse(Json(b): Json<SqlBody>) -> Result<Json<Value>, ApiError> {
    let q = crate::sql::parse(&b.sql).map_err(|e| StoreError::Query(e.into()))?;
    Ok(Json(json!({"query": q, "canonical": q.to_sql()})))
}

async fn query_logs(State(s): State<Arc<Store>>, Json(f): Json<LogFilter>) -> Json<Value> {
    Json(json!({"events": s.logs.query_logs(&f)}))
}

async fn write_points(
    State(s): State<Arc<Store>>,
    Json(points): Json<Vec<MetricPoint>>,
) -> Result<Json<Value>, ApiError> {
    let report = s.metrics.write_points(&points)?;
    Ok(Json(serde_json::to_value(report).unwrap_or(Value::Null)))
}

async fn write_logs(
    State(s): State<Arc<Store>>,
    Json(events): Json<Vec<LogEvent>>,
) -> Result<Json<Value>, ApiError> {
    let stored = s.logs.store_logs(&events)?;
    Ok(Json(json!({"stored": stored})))
}

async fn stats(State(s): State<Arc<Store>>) -> Json<Value> {
    Json(json!({"metrics": s.metrics.stats(), "log_events": s.logs.len()}))
}

async fn list_panels(State(s): State<Arc<Store>>) -> Json<Value> {
    let panels: Vec<Value> = s.meta.list(PANELS_NS).into_iter().map(|(_, v)| v).collect();
    Json(json!({"panels": panels}))
}

#[derive(Deserialize)]
struct Panel {
    id: String,
    sql: String,
    #[serde(default)]
    refresh_seconds: Option<u64>,
    #[serde(default)]
    render: Option<String>,
}

async fn save_panel(State(s): State<Arc<Store>>, Json(p): Json<Panel>) -> Result<Json<Value>, ApiError> {
    crate::sql::parse(&p.sql).map_err(|e| StoreError::Query(e.into()))?;
    if p.id.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, json!({"error": "empty panel id"})));
    }
    let doc = json!({
        "id": p.id,
        "sql": p.sql,
        "refresh_seconds": p.refresh_seconds.unwrap_or(60),
        "render": p.render.unwrap_or_else(|| "timeseries".into()),
    });
    s.meta.put(PANELS_NS, &p.id, doc.clone())?;
    Ok(Json(doc))
}

async fn delete_panel(State(s): State<Arc<Store>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if s.meta.delete(PANELS_NS, &id)? {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError(StatusCode::NOT_FOUND, json!({"error": format!("unknown panel '{id}'")})))
    }
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/query/parse", post(parse))
        .route("/v1/logs/query", post(query_logs))
        .route("/v1/logs", post(write_logs))
        .route("/v1/points", post(write_points))
        .route("/v1/store/stats", get(stats))
        .route("/v1/panels", get(list_panels).post(save_panel))
        .route("/v1/panels/{id}", delete(delete_panel))
        .with_state(store)
}
