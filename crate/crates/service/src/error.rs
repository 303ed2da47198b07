use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no model '{id}'"))
    }

    pub fn loading(id: &str) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, format!("model '{id}' is still loading"))
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<strokediff::Error> for ApiError {
    fn from(e: strokediff::Error) -> Self {
        use strokediff::Error as E;
        let status = match &e {
            E::Preprocess(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::Data(_) | E::Config(_) | E::Contract(_) | E::Mode(_) | E::Parse { .. } | E::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
