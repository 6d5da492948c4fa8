use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use som_gateway::{GatewayError, SegmenterError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("session {0} not found")]
    NoSession(String),
    #[error("region {0} not found")]
    UnknownRegion(u32),
    #[error("mark {0:?} is already in use")]
    DuplicateMark(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("cannot decode image: {0}")]
    BadImage(String),
    #[error("ingestion failed: {0}")]
    Ingest(String),
    #[error("this session has no segmenter to add regions with")]
    NoSegmenter,
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    retry_advised: bool,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::NoSession(_) => "no_session",
            ApiError::UnknownRegion(_) => "unknown_region",
            ApiError::DuplicateMark(_) => "duplicate_mark",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::BadImage(_) => "bad_image",
            ApiError::Ingest(_) => "ingest_failed",
            ApiError::NoSegmenter => "no_segmenter",
            ApiError::Segmenter(_) => "segmenter_failed",
            ApiError::Gateway(e) => e.code(),
            ApiError::Internal(_) => "internal",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::NoSession(_) | ApiError::UnknownRegion(_) => StatusCode::NOT_FOUND,
            ApiError::DuplicateMark(_) | ApiError::NoSegmenter => StatusCode::CONFLICT,
            ApiError::BadRequest(_) | ApiError::BadImage(_) => StatusCode::BAD_REQUEST,
            ApiError::Ingest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Segmenter(_) => StatusCode::BAD_GATEWAY,
            ApiError::Gateway(GatewayError::RateLimited { .. }) => StatusCode::TOO_MANY_REQUESTS,
            ApiError::Gateway(GatewayError::Timeout(_)) => StatusCode::GATEWAY_TIMEOUT,
            ApiError::Gateway(GatewayError::InvalidRequest(_)) => StatusCode::BAD_REQUEST,
            ApiError::Gateway(_) => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn retry_advised(&self) -> bool {
        match self {
            ApiError::Gateway(e) => e.is_retryable(),
            ApiError::Segmenter(SegmenterError::Transport { retry_advised, .. }) => *retry_advised,
            _ => false,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
            retry_advised: self.retry_advised(),
        };
        (self.status(), Json(body)).into_response()
    }
}
