//! Versioned HTTP routes.

use std::convert::Infallible;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use qda_core::ingest::SourceSpec;
use qda_core::jobs::Submission;
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::error::ServiceError;
use crate::service::Service;

/// Request bodies above this size are refused.
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/v1/healthz", get(health))
        .route("/v1/methods", get(methods))
        .route("/v1/jobs", post(submit))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/jobs/{id}/events", get(events))
        .route("/v1/jobs/{id}/result", get(result))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

pub async fn serve(service: Service, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// Like [`serve`], stopping once `shutdown` resolves.
pub async fn serve_until(
    service: Service,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn methods(State(service): State<Service>) -> impl IntoResponse {
    Json(service.methods())
}

async fn submit(State(service): State<Service>, request: Request) -> Result<Response, ServiceError> {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let submission = if is_multipart {
        let multipart = Multipart::from_request(request, &service)
            .await
            .map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        read_multipart(multipart).await?
    } else {
        let Json(submission) = Json::<Submission>::from_request(request, &service)
            .await
            .map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        submission
    };
    let accepted = service.submit(submission)?;
    Ok((StatusCode::ACCEPTED, Json(accepted)).into_response())
}

/// Fields: `method`, `file` (with a filename), optional `declared_kind`,
/// `output_format` and `custom_instruction`.
async fn read_multipart(mut multipart: Multipart) -> Result<Submission, ServiceError> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::BadRequest(e.body_text());
    let (mut method, mut format, mut instruction, mut kind, mut file) = (None, None, None, None, None);
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "file" => {
                let filename = field.file_name().unwrap_or("upload").to_string();
                let bytes = field.bytes().await.map_err(bad)?;
                file = Some((filename, bytes.to_vec()));
            }
            "method" => method = Some(field.text().await.map_err(bad)?),
            "output_format" => format = Some(field.text().await.map_err(bad)?),
            "custom_instruction" => instruction = Some(field.text().await.map_err(bad)?),
            "declared_kind" => kind = Some(field.text().await.map_err(bad)?),
            other => return Err(ServiceError::BadRequest(format!("unexpected multipart field '{other}'"))),
        }
    }
    let method = method.ok_or_else(|| ServiceError::BadRequest("missing field 'method'".into()))?;
    let (filename, bytes) = file.ok_or_else(|| ServiceError::BadRequest("missing field 'file'".into()))?;
    Ok(Submission {
        method,
        source: SourceSpec::FileUpload {
            filename,
            bytes,
            declared_kind: kind.filter(|k| !k.trim().is_empty()),
        },
        custom_instruction: instruction,
        output_format: format.filter(|f| !f.trim().is_empty()),
        options: None,
    })
}

async fn job(State(service): State<Service>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(service.job(&id)?).into_response())
}

async fn events(State(service): State<Service>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let stream = service
        .events(&id)?
        .into_stream()
        .map(|event| Ok::<_, Infallible>(event.to_ndjson_line()));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

#[derive(Debug, Deserialize)]
struct ResultQuery {
    format: Option<String>,
}

async fn result(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<ResultQuery>,
) -> Result<Response, ServiceError> {
    let (format, bytes) = service.result(&id, query.format.as_deref())?;
    let disposition = format!("attachment; filename=\"{id}.{}\"", format.file_extension());
    Ok((
        [
            (header::CONTENT_TYPE, format.content_type().to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}
