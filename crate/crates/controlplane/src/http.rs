//! Control-plane routes.
//!
//! - `POST /v1/agents` register, `GET /v1/agents[?selector=role=dbms]` list
//! - `GET /v1/agents/{id}/tasks` compiled task set
//! - `GET|POST /v1/templates`, `DELETE /v1/templates/{id}` plan/unplan
//! - `POST /v1/executions`, `GET /v1/executions?task_id=&server_id=&from=&to=`

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use miniops_core::{ExecutionLog, Selector};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{ControlPlane, CpError, ExecutionQuery, ServerDescriptor, TaskTemplate};

pub struct ApiError(CpError);

impl From<CpError> for ApiError {
    fn from(e: CpError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            CpError::UnknownTemplate(_) | CpError::UnknownAgent(_) => StatusCode::NOT_FOUND,
            CpError::DuplicateTemplate(_) | CpError::AlreadyDisabled(_) => StatusCode::CONFLICT,
            CpError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

async fn register(State(cp): State<Arc<ControlPlane>>, Json(d): Json<ServerDescriptor>) -> ApiResult {
    let ack = cp.register_agent(d)?;
    Ok(Json(json!(ack)))
}

#[derive(Deserialize)]
struct ListParams {
    selector: Option<String>,
}

async fn list_agents(State(cp): State<Arc<ControlPlane>>, Query(p): Query<ListParams>) -> ApiResult {
    let servers = match p.selector.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
        Some(text) => {
            let sel: Selector = text.parse().map_err(CpError::Selector)?;
            cp.resolve_targets(&sel)?
        }
        None => cp.servers(),
    };
    let rows: Vec<Value> = servers
        .into_iter()
        .map(|s| {
            let version = cp.version(&s.server_id);
            let mut v = json!(s);
            v["version"] = json!(version);
            v
        })
        .collect();
    Ok(Json(json!({"agents": rows})))
}

async fn resolve(State(cp): State<Arc<ControlPlane>>, Json(sel): Json<Selector>) -> ApiResult {
    Ok(Json(json!({"agents": cp.resolve_targets(&sel)?})))
}

async fn tasks(State(cp): State<Arc<ControlPlane>>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(json!(cp.compile_config(&id)?)))
}

async fn list_templates(State(cp): State<Arc<ControlPlane>>) -> Json<Value> {
    Json(json!({"templates": cp.templates()}))
}

async fn plan(State(cp): State<Arc<ControlPlane>>, Json(t): Json<TaskTemplate>) -> ApiResult {
    let id = t.template_id.clone();
    let affected = cp.plan_task(t)?;
    Ok(Json(json!({"template_id": id, "affected": affected})))
}

async fn unplan(State(cp): State<Arc<ControlPlane>>, Path(id): Path<String>) -> ApiResult {
    let affected = cp.unplan_task(&id)?;
    Ok(Json(json!({"template_id": id, "affected": affected})))
}

async fn record(State(cp): State<Arc<ControlPlane>>, Json(log): Json<ExecutionLog>) -> ApiResult {
    cp.record_execution(log)?;
    Ok(Json(json!({"ok": true})))
}

async fn executions(State(cp): State<Arc<ControlPlane>>, Query(q): Query<ExecutionQuery>) -> Json<Value> {
    Json(json!({"executions": cp.executions(&q)}))
}

pub fn router(cp: Arc<ControlPlane>) -> Router {
    Router::new()
        .route("/v1/agents", post(register).get(list_agents))
        .route("/v1/agents/resolve", post(resolve))
        .route("/v1/agents/{id}/tasks", get(tasks))
        .route("/v1/templates", get(list_templates).post(plan))
        .route("/v1/templates/{id}", delete(unplan))
        .route("/v1/executions", post(record).get(executions))
        .with_state(cp)
}
