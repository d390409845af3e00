//! JSON REST API over [`DatasetService`].
//!
//! | Method | Path | Body / query | Success |
//! |---|---|---|---|
//! | POST | `/groups` | [`GroupRecord`] | 201 `{group_id}` |
//! | GET | `/groups/{id}` | | 200 [`GroupSummary`] |
//! | GET | `/groups/{id}/images/{name}` | `name` = `lr` or candidate index | 200 image bytes |
//! | POST | `/annotators/qualify` | [`QualifyRequest`] | 200 [`AnnotatorProfile`](super::AnnotatorProfile) |
//! | GET | `/tasks/next?annotator=ID` | | 200 [`Task`](super::Task), 204 when none |
//! | POST | `/rankings` | [`RankingSubmission`] | 200 [`GroupSummary`] |
//! | POST | `/groups/{id}/finalize` | | 200 [`GroupSummary`] |
//! | POST | `/groups/{id}/reject` | `{reason}` | 200 [`GroupSummary`] |
//! | GET | `/reports/win-rates` | | 200 [`WinRateMatrix`](crate::ranking::WinRateMatrix) |
//! | GET | `/export` | | 200 JSONL |
//!
//! Errors are `{"error": message}` with 400, 403, 404, 409 or 500.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetService, GoldItem, GroupRecord, GroupSummary, RejectionReason};
use crate::ranking::RankVector;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualifyRequest {
    pub annotator_id: String,
    pub gold: Vec<GoldItem>,
    pub submitted: Vec<RankVector>,
}

/// Ranks follow the display order of the issued task. Ties may use
/// mid-ranks or competition ranks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingSubmission {
    pub group_id: String,
    pub annotator_id: String,
    pub ranks: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectRequest {
    pub reason: RejectionReason,
}

#[derive(Debug, Deserialize)]
struct NextTaskQuery {
    annotator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(DatasetError);

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            DatasetError::InvalidInput(_) | DatasetError::Ranking(_) => StatusCode::BAD_REQUEST,
            DatasetError::NotFound(_) => StatusCode::NOT_FOUND,
            DatasetError::Conflict(_) => StatusCode::CONFLICT,
            DatasetError::Forbidden(_) => StatusCode::FORBIDDEN,
            DatasetError::Io { .. } | DatasetError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(ErrorBody {
                error: self.0.to_string(),
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Svc = State<Arc<DatasetService>>;

pub fn router(service: Arc<DatasetService>) -> Router {
    Router::new()
        .route("/groups", post(ingest))
        .route("/groups/{id}", get(group))
        .route("/groups/{id}/images/{name}", get(group_image))
        .route("/groups/{id}/finalize", post(finalize))
        .route("/groups/{id}/reject", post(reject))
        .route("/annotators/qualify", post(qualify))
        .route("/tasks/next", get(next_task))
        .route("/rankings", post(submit))
        .route("/reports/win-rates", get(win_rates))
        .route("/export", get(export))
        .with_state(service)
}

/// Serves the API until the listener fails.
pub async fn serve(service: Arc<DatasetService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "dataset service listening");
    axum::serve(listener, router(service)).await
}

async fn ingest(State(svc): Svc, Json(record): Json<GroupRecord>) -> ApiResult<Response> {
    let id = svc.ingest_group(record)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "group_id": id }))).into_response())
}

async fn group(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Json<GroupSummary>> {
    Ok(Json(svc.group(&id)?))
}

async fn group_image(State(svc): Svc, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    let path = svc.image_path(&id, &name)?;
    let bytes = tokio::fs::read(&path).await.map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mime = image::ImageFormat::from_path(&path)
        .map(|f| f.to_mime_type())
        .unwrap_or("application/octet-stream");
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn qualify(State(svc): Svc, Json(req): Json<QualifyRequest>) -> ApiResult<Response> {
    Ok(Json(svc.qualify_annotator(&req.annotator_id, &req.gold, &req.submitted)?).into_response())
}

async fn next_task(State(svc): Svc, Query(q): Query<NextTaskQuery>) -> ApiResult<Response> {
    Ok(match svc.next_task(&q.annotator)? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(svc): Svc, Json(req): Json<RankingSubmission>) -> ApiResult<Json<GroupSummary>> {
    Ok(Json(svc.submit_ranking(&req.annotator_id, &req.group_id, &req.ranks)?))
}

async fn finalize(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Json<GroupSummary>> {
    Ok(Json(svc.finalize_group(&id)?))
}

async fn reject(State(svc): Svc, Path(id): Path<String>, Json(req): Json<RejectRequest>) -> ApiResult<Json<GroupSummary>> {
    Ok(Json(svc.reject_group(&id, req.reason)?))
}

async fn win_rates(State(svc): Svc) -> ApiResult<Response> {
    Ok(Json(svc.report_win_rates()?).into_response())
}

async fn export(State(svc): Svc) -> ApiResult<Response> {
    let body = svc.export_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
