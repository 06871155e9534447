//! JSON-over-HTTP routes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::ServiceError;
use crate::session::{CreateSession, StateView, TraceView};
use crate::store::SessionStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub point_index: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Malformed(_) => StatusCode::BAD_REQUEST,
            ServiceError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Journal { .. } | ServiceError::Io { .. } | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(r: JsonRejection) -> Self {
        match r {
            // Well-formed JSON with the wrong shape or values.
            JsonRejection::JsonDataError(e) => ServiceError::InvalidRequest(e.body_text()),
            other => ServiceError::Malformed(other.body_text()),
        }
    }
}

impl From<PathRejection> for ServiceError {
    fn from(r: PathRejection) -> Self {
        ServiceError::Malformed(r.body_text())
    }
}

type Shared = Arc<SessionStore>;
type ApiResult<T> = Result<Json<T>, ServiceError>;

async fn create_session(State(store): State<Shared>, body: Result<Json<CreateSession>, JsonRejection>) -> Response {
    let result = body.map_err(ServiceError::from).and_then(|Json(req)| store.create(req));
    match result {
        Ok(view) => (StatusCode::CREATED, Json(view)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit_label(
    State(store): State<Shared>,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<StateView> {
    let Path(id) = id?;
    let Json(req) = body?;
    store.submit_label(&id, req.point_index, req.class).map(Json)
}

async fn get_state(State(store): State<Shared>, id: Result<Path<String>, PathRejection>) -> ApiResult<StateView> {
    let Path(id) = id?;
    store.state(&id).map(Json)
}

async fn get_trace(State(store): State<Shared>, id: Result<Path<String>, PathRejection>) -> ApiResult<TraceView> {
    let Path(id) = id?;
    store.trace(&id).map(Json)
}

/// Routes:
/// `POST /sessions`, `POST /sessions/{id}/labels`, `GET /sessions/{id}`,
/// `GET /sessions/{id}/trace`.
pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/trace", get(get_trace))
        .layer(CorsLayer::permissive())
        .with_state(store)
}

/// Serves the API until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
