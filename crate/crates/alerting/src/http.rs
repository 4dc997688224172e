//! Alerting routes.
//!
//! - `POST /v1/rules` upsert, `GET /v1/rules`, `DELETE /v1/rules/{id}`
//! - `POST /v1/rules/test` dry-run one evaluation of the posted rule
//! - `GET /v1/alerts?state=pending|firing|resolved`

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{AlertEngine, AlertError, AlertRule, AlertState};

pub struct ApiError(AlertError);

impl From<AlertError> for ApiError {
    fn from(e: AlertError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.0.to_string()});
        let status = match &self.0 {
            AlertError::Source(p) => {
                body["column"] = json!(p.column);
                StatusCode::BAD_REQUEST
            }
            AlertError::InvalidRule(_) => StatusCode::BAD_REQUEST,
            AlertError::UnknownRule(_) => StatusCode::NOT_FOUND,
            AlertError::SourceUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            AlertError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;
type Engine = State<Arc<AlertEngine>>;

async fn put_rule(State(e): Engine, Json(rule): Json<AlertRule>) -> ApiResult {
    let id = rule.rule_id.clone();
    let replaced = e.put_rule(rule)?;
    Ok(Json(json!({"rule_id": id, "replaced": replaced})))
}

async fn list_rules(State(e): Engine) -> ApiResult {
    Ok(Json(json!({"rules": e.rules()})))
}

async fn delete_rule(State(e): Engine, Path(id): Path<String>) -> ApiResult {
    let resolved = e.delete_rule(&id)?;
    Ok(Json(json!({"rule_id": id, "resolved": resolved})))
}

async fn test_rule(State(e): Engine, Json(rule): Json<AlertRule>) -> ApiResult {
    let now = e.now_ms();
    let transitions = e.dry_run(&rule, now)?;
    Ok(Json(json!({"at": now, "transitions": transitions})))
}

#[derive(Deserialize)]
struct AlertsParams {
    state: Option<String>,
}

async fn alerts(State(e): Engine, Query(p): Query<AlertsParams>) -> Result<Response, ApiError> {
    let state = match p.state.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => match s.parse::<AlertState>() {
            Ok(st) => Some(st),
            Err(msg) => return Ok((StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()),
        },
    };
    Ok(Json(json!({"alerts": e.alerts(state), "stats": e.stats()})).into_response())
}

pub fn router(engine: Arc<AlertEngine>) -> Router {
    Router::new()
        .route("/v1/rules", post(put_rule).get(list_rules))
        .route("/v1/rules/test", post(test_rule))
        .route("/v1/rules/{id}", delete(delete_rule))
        .route("/v1/alerts", get(alerts))
        .with_state(engine)
}
