use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use inpaint_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

/// JSON error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Core(e) => match e {
                CoreError::Dimension(_)
                | CoreError::Palette(_)
                | CoreError::UnknownColor { .. }
                | CoreError::Image(_)
                | CoreError::Data(_)
                | CoreError::Parameter(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, detail) = match self {
            ServiceError::NotFound(id) => ("not_found", json!({ "session_id": id })),
            ServiceError::BadRequest(_) => ("bad_request", Value::Null),
            ServiceError::Core(CoreError::UnknownColor { pixels, total }) => (
                "unknown_color",
                json!({ "pixels": pixels, "total": total }),
            ),
            ServiceError::Core(CoreError::Dimension(_)) => ("dimension", Value::Null),
            ServiceError::Core(CoreError::Palette(_)) => ("palette", Value::Null),
            ServiceError::Core(CoreError::Image(_)) => ("malformed_image", Value::Null),
            ServiceError::Core(CoreError::Data(_) | CoreError::Parameter(_)) => {
                ("bad_request", Value::Null)
            }
            ServiceError::Core(_) | ServiceError::Internal(_) => ("internal", Value::Null),
        };
        ErrorBody {
            code: code.to_string(),
            message: self.to_string(),
            detail,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
