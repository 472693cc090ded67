use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use coannotate_core::protocol::{ErrorKind, ProtocolError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
            },
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", message)
    }

    /// Error as shown to an admin: the engine's message verbatim.
    pub fn admin(e: ProtocolError) -> Self {
        let (status, code) = classify(&e);
        Self::new(status, code, e.to_string())
    }

    /// Error as shown to an annotator. Phase errors get a fixed message so
    /// that nothing about later phases leaks through them.
    pub fn annotator(e: ProtocolError) -> Self {
        let (status, code) = classify(&e);
        match e {
            ProtocolError::WrongPhase { .. } | ProtocolError::ScaffoldNotAvailable => Self::new(
                status,
                code,
                "protocol violation: not available in the current phase",
            ),
            ProtocolError::Storage(_) | ProtocolError::Metrics(_) => {
                Self::new(status, code, "internal error")
            }
            e => Self::new(status, code, e.to_string()),
        }
    }
}

fn classify(e: &ProtocolError) -> (StatusCode, &'static str) {
    match e {
        ProtocolError::WrongPhase { .. } | ProtocolError::ScaffoldNotAvailable => {
            (StatusCode::CONFLICT, "protocol_violation")
        }
        e => match e.kind() {
            ErrorKind::InvalidInput => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorKind::Conflict => (StatusCode::CONFLICT, "conflict"),
            ErrorKind::Forbidden => (StatusCode::FORBIDDEN, "forbidden"),
            ErrorKind::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        },
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(message = %self.body.message, "request failed");
        }
        (self.status, Json(self.body)).into_response()
    }
}
