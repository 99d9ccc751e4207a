//! JSON API over a review store, optionally serving the review UI's static
//! assets from the same origin.
//!
//! | method | path                  | body                                   |
//! |--------|-----------------------|----------------------------------------|
//! | GET    | `/items?status=a,b`   |                                        |
//! | GET    | `/items/{id}`         |                                        |
//! | POST   | `/items/{id}/action`  | `{"expected_revision", "action"}`      |
//! | GET    | `/instructions`       |                                        |
//! | PUT    | `/instructions`       | `{"text", "expected_version"?}`        |
//! | POST   | `/export`             | `{"statuses"?}`                        |
//!
//! Every response body carries a `revision`: the item's revision for item
//! responses, the instructions version for instructions, and the store's
//! event count otherwise. A stale `expected_revision` yields 409.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qbd_core::review::{ReviewAction, ReviewError, ReviewStatus, ReviewStore};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub type SharedStore = Arc<ReviewStore>;

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, revision) = match &self.0 {
            ReviewError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            ReviewError::Conflict { current, .. } => (StatusCode::CONFLICT, Some(*current)),
            ReviewError::InstructionsConflict { current, .. } => (StatusCode::CONFLICT, Some(*current)),
            ReviewError::InvalidPermutation(_)
            | ReviewError::UnknownPair { .. }
            | ReviewError::NotPairwise(_)
            | ReviewError::InvalidVerdict(_)
            | ReviewError::EmptyInstructions
            | ReviewError::NothingToExport
            | ReviewError::MixedOrigins => (StatusCode::UNPROCESSABLE_ENTITY, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string(), "revision": revision }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    /// Comma-separated statuses; all items when absent.
    pub status: Option<String>,
}

fn bad_request(msg: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": msg, "revision": null }))).into_response()
}

async fn list_items(State(store): State<SharedStore>, Query(q): Query<ListQuery>) -> Response {
    let statuses: Result<Vec<ReviewStatus>, String> = q
        .status
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match statuses {
        Ok(statuses) => {
            let items = store.list(&statuses);
            Json(json!({ "revision": store.revision(), "items": items })).into_response()
        }
        Err(e) => bad_request(e),
    }
}

async fn get_item(State(store): State<SharedStore>, Path(id): Path<String>) -> ApiResult {
    let item = store.get(&id)?;
    Ok(Json(json!({ "revision": item.revision, "item": item })))
}

#[derive(Debug, Deserialize)]
pub struct ActionRequest {
    pub expected_revision: u64,
    pub action: ReviewAction,
}

async fn apply_action(
    State(store): State<SharedStore>,
    Path(id): Path<String>,
    Json(req): Json<ActionRequest>,
) -> ApiResult {
    let item = store.apply_action(&id, req.expected_revision, req.action)?;
    Ok(Json(json!({ "revision": item.revision, "item": item })))
}

async fn get_instructions(State(store): State<SharedStore>) -> Json<Value> {
    let doc = store.instructions();
    Json(json!({ "revision": doc.version, "instructions": doc }))
}

#[derive(Debug, Deserialize)]
pub struct InstructionsRequest {
    pub text: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

async fn put_instructions(State(store): State<SharedStore>, Json(req): Json<InstructionsRequest>) -> ApiResult {
    let doc = store.update_instructions(&req.text, req.expected_version)?;
    Ok(Json(json!({ "revision": doc.version, "instructions": doc })))
}

#[derive(Debug, Default, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub statuses: Option<Vec<ReviewStatus>>,
}

async fn export(State(store): State<SharedStore>, body: Option<Json<ExportRequest>>) -> ApiResult {
    let statuses = body
        .and_then(|Json(b)| b.statuses)
        .unwrap_or_else(|| vec![ReviewStatus::Accepted, ReviewStatus::Corrected]);
    let dataset = store.export_reviewed(&statuses)?;
    Ok(Json(json!({ "revision": store.revision(), "dataset": dataset })))
}

/// API routes, plus the UI's static files as a fallback when `ui_dir` is set.
pub fn router(store: SharedStore, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/action", post(apply_action))
        .route("/instructions", get(get_instructions).put(put_instructions))
        .route("/export", post(export))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

pub async fn serve(store: SharedStore, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, ui_dir)).await
}

/// Blocking entry point that runs the service on its own runtime.
pub fn run(store: SharedStore, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve(store, addr, ui_dir))
}
