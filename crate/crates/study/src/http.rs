use std::net::SocketAddr;
use std::path::Path as FsPath;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::service::{CreateStudy, LabelSubmission, StudyService};
use crate::StudyError;

pub const COMPLETE_HEADER: &str = "x-study-complete";

impl StudyError {
    pub fn status(&self) -> StatusCode {
        match self {
            StudyError::UnknownStudy(_) | StudyError::UnknownSession(_) | StudyError::UnknownSnippet(_) => {
                StatusCode::NOT_FOUND
            }
            StudyError::OutOfOrder { .. } | StudyError::AlreadyLabelled(_) | StudyError::AmbiguousMedia(_) => {
                StatusCode::CONFLICT
            }
            StudyError::PoolTooSmall { .. } | StudyError::InvalidLabel(_) | StudyError::InvalidRequest(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            StudyError::Journal(_) | StudyError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            StudyError::UnknownStudy(_) => "unknown_study",
            StudyError::UnknownSession(_) => "unknown_session",
            StudyError::UnknownSnippet(_) => "unknown_snippet",
            StudyError::PoolTooSmall { .. } => "pool_too_small",
            StudyError::OutOfOrder { .. } => "out_of_order",
            StudyError::AlreadyLabelled(_) => "already_labelled",
            StudyError::InvalidLabel(_) => "invalid_label",
            StudyError::InvalidRequest(_) => "invalid_request",
            StudyError::AmbiguousMedia(_) => "ambiguous_media",
            StudyError::Journal(_) | StudyError::Io(_) => "internal",
        }
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

type Shared = Arc<StudyService>;

#[derive(Deserialize)]
struct AssessorBody {
    assessor: String,
}

#[derive(Deserialize)]
struct MediaQuery {
    study: Option<String>,
}

async fn create_study(State(svc): State<Shared>, Json(req): Json<CreateStudy>) -> Result<Response, StudyError> {
    let summary = svc.create_study(req)?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn create_session(
    State(svc): State<Shared>,
    Path(study_id): Path<String>,
    Json(body): Json<AssessorBody>,
) -> Result<Response, StudyError> {
    Ok(Json(svc.create_session(&study_id, &body.assessor)?).into_response())
}

async fn next_item(State(svc): State<Shared>, Path(session_id): Path<String>) -> Result<Response, StudyError> {
    Ok(Json(svc.next_item(&session_id)?).into_response())
}

async fn submit_label(
    State(svc): State<Shared>,
    Path(session_id): Path<String>,
    Json(sub): Json<LabelSubmission>,
) -> Result<Response, StudyError> {
    // the journal write syncs to disk
    let ack = tokio::task::block_in_place(|| svc.submit_label(&session_id, &sub))?;
    Ok(Json(ack).into_response())
}

async fn export(State(svc): State<Shared>, Path(study_id): Path<String>) -> Result<Response, StudyError> {
    let export = svc.export(&study_id)?;
    let complete = HeaderValue::from_static(if export.complete { "true" } else { "false" });
    Ok((
        [
            (
                header::CONTENT_TYPE,
                HeaderValue::from_static("text/csv; charset=utf-8"),
            ),
            (header::HeaderName::from_static(COMPLETE_HEADER), complete),
        ],
        export.csv,
    )
        .into_response())
}

fn content_type(path: &FsPath) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("mp4") => "video/mp4",
        Some("webm") => "video/webm",
        Some("zip") => "application/zip",
        Some("tar") => "application/x-tar",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn media(
    State(svc): State<Shared>,
    Path(snippet_id): Path<String>,
    Query(q): Query<MediaQuery>,
) -> Result<Response, StudyError> {
    let path = svc.media_path(&snippet_id, q.study.as_deref())?;
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StudyError::UnknownSnippet(snippet_id)),
        Err(e) => return Err(e.into()),
    };
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/studies", post(create_study))
        .route("/studies/{id}/sessions", post(create_session))
        .route("/studies/{id}/export.csv", get(export))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/media/{snippet_id}", get(media))
        .with_state(service)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, service: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// Runs the API on a background runtime. Used by tests and tools that
/// talk to the service over HTTP.
pub struct Background {
    pub addr: SocketAddr,
    _runtime: tokio::runtime::Runtime,
}

impl Background {
    pub fn start(service: Shared, addr: SocketAddr) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        runtime.spawn(async move {
            let _ = serve(listener, service).await;
        });
        Ok(Background {
            addr,
            _runtime: runtime,
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}
