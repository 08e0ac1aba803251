use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unsupported media type: {0}")]
    UnsupportedMedia(String),
    #[error("could not decode image: {0}")]
    BadImage(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no medicine with id {0:?}")]
    NotFound(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("catalog does not match the model: {0}")]
    Catalog(String),
    #[error(transparent)]
    Core(#[from] medbox_core::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnsupportedMedia(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ServiceError::BadImage(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Config(_) | ServiceError::Catalog(_) | ServiceError::Core(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnsupportedMedia(_) => "unsupported_media_type",
            ServiceError::BadImage(_) => "bad_image",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Config(_) => "config",
            ServiceError::Catalog(_) => "catalog",
            ServiceError::Core(_) | ServiceError::Internal(_) => "internal",
        }
    }
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
