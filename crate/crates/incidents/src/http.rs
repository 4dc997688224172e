//! Incident routes.
//!
//! - `POST /v1/tickets`, `GET /v1/tickets?team=&status=&q=`, `GET /v1/tickets/{id}`
//! - `POST /v1/tickets/{id}/transition` `{status, actor, expected_revision?}`
//! - `POST /v1/tickets/{id}/comments` `{author, text, expected_revision?}`
//! - `POST /v1/tickets/{id}/assign` `{assignee, actor}`
//! - `GET /v1/teams/{team}/queue`
//! - `GET|POST /v1/triage-rules`

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{IncidentError, IncidentService, NewTicket, Status, TicketFilter, TriageRule};

pub struct ApiError(IncidentError);

impl From<IncidentError> for ApiError {
    fn from(e: IncidentError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.0.to_string()});
        let status = match &self.0 {
            IncidentError::MissingAttributes(m) => {
                body["missing"] = json!(m);
                StatusCode::BAD_REQUEST
            }
            IncidentError::IllegalTransition { allowed, .. } => {
                body["allowed"] = json!(allowed);
                StatusCode::CONFLICT
            }
            IncidentError::UnknownTicket(_) => StatusCode::NOT_FOUND,
            IncidentError::Closed(_) | IncidentError::Conflict { .. } => StatusCode::CONFLICT,
            IncidentError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;
type Svc = State<Arc<IncidentService>>;

async fn create(State(svc): Svc, Json(req): Json<NewTicket>) -> Result<Response, ApiError> {
    let created = svc.create_ticket(req)?;
    let code = if created.created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((code, Json(json!(created)).into_response()).into_response())
}

async fn list(State(svc): Svc, Query(f): Query<TicketFilter>) -> ApiResult {
    Ok(Json(json!({"tickets": svc.list(&f)})))
}

async fn show(State(svc): Svc, Path(id): Path<String>) -> ApiResult {
    let t = svc.get(&id).ok_or(IncidentError::UnknownTicket(id))?;
    Ok(Json(json!(t)))
}

#[derive(Deserialize)]
struct TransitionReq {
    status: Status,
    actor: String,
    expected_revision: Option<u64>,
}

async fn transition(State(svc): Svc, Path(id): Path<String>, Json(r): Json<TransitionReq>) -> ApiResult {
    Ok(Json(json!(svc.transition(&id, r.status, &r.actor, r.expected_revision)?)))
}

#[derive(Deserialize)]
struct CommentReq {
    author: String,
    text: String,
    expected_revision: Option<u64>,
}

async fn comment(State(svc): Svc, Path(id): Path<String>, Json(r): Json<CommentReq>) -> ApiResult {
    Ok(Json(json!(svc.add_comment(&id, &r.author, &r.text, r.expected_revision)?)))
}

#[derive(Deserialize)]
struct AssignReq {
    assignee: Option<String>,
    actor: String,
    expected_revision: Option<u64>,
}

async fn assign(State(svc): Svc, Path(id): Path<String>, Json(r): Json<AssignReq>) -> ApiResult {
    Ok(Json(json!(svc.assign(
        &id,
        r.assignee.as_deref(),
        &r.actor,
        r.expected_revision
    )?)))
}

async fn queue(State(svc): Svc, Path(team): Path<String>) -> ApiResult {
    Ok(Json(json!({"team": team, "tickets": svc.rank_queue(&team)})))
}

async fn get_rules(State(svc): Svc) -> ApiResult {
    Ok(Json(json!({"rules": svc.rules()})))
}

async fn put_rules(State(svc): Svc, Json(rules): Json<Vec<TriageRule>>) -> ApiResult {
    svc.set_rules(rules)?;
    Ok(Json(json!({"rules": svc.rules()})))
}

pub fn router(svc: Arc<IncidentService>) -> Router {
    Router::new()
        .route("/v1/tickets", post(create).get(list))
        .route("/v1/tickets/{id}", get(show))
        .route("/v1/tickets/{id}/transition", post(transition))
        .route("/v1/tickets/{id}/comments", post(comment))
        .route("/v1/tickets/{id}/assign", post(assign))
        .route("/v1/teams/{team}/queue", get(queue))
        .route("/v1/triage-rules", get(get_rules).post(put_rules))
        .with_state(svc)
}
