use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use qda_core::jobs::{ErrorBody, ErrorCode};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no job with id '{0}'")]
    NotFound(String),
    #[error("job '{id}' is {state}, not done")]
    NotReady { id: String, state: &'static str },
    #[error("queue is full ({capacity} jobs pending)")]
    QueueFull { capacity: usize },
    #[error("{0}")]
    UnsupportedFormat(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ServiceError::BadRequest(_) => ErrorCode::BadRequest,
            ServiceError::NotFound(_) => ErrorCode::NotFound,
            ServiceError::NotReady { .. } => ErrorCode::NotReady,
            ServiceError::QueueFull { .. } => ErrorCode::QueueFull,
            ServiceError::UnsupportedFormat(_) => ErrorCode::UnsupportedFormat,
            ServiceError::Internal(_) => ErrorCode::Internal,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) | ServiceError::UnsupportedFormat(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotReady { .. } => StatusCode::CONFLICT,
            ServiceError::QueueFull { .. } => StatusCode::TOO_MANY_REQUESTS,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
