use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use explore_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

/// Failure to bring the service up.
#[derive(Debug, Error)]
pub enum StartupError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

/// Error returned to API clients as `{code, message}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn no_snapshot() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no_snapshot", "no model snapshot has been published yet")
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such route")
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        use CoreError::*;
        let (status, code) = match &e {
            UnknownUser(_) => (StatusCode::NOT_FOUND, "unknown_user"),
            UnknownSong(_) => (StatusCode::NOT_FOUND, "unknown_song"),
            InvalidRange { .. } | InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            EmptyNeighborhood(_) => (StatusCode::UNPROCESSABLE_ENTITY, "empty_neighborhood"),
            NoRatingSupport { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no_rating_support"),
            MissingComponent(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_component"),
            EmptySeeds | MalformedLine { .. } | InvalidCatalog { .. } | Csv(_) | NoRepresentatives => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_seed_file")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
