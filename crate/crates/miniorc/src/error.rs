//! The wire error shape and the one table mapping codes to statuses.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use miniorc_core::platform::PlatformError;
use serde::{Deserialize, Serialize};

use crate::journal::JournalError;

/// Every code the gateway can answer with, and its HTTP status. `docs/api.md`
/// carries the same table.
pub const ERROR_TABLE: &[(&str, u16)] = &[
    ("BAD_REQUEST", 400),
    ("BAD_SHAPE", 400),
    ("CYCLIC_DEPENDENCY", 400),
    ("DUPLICATE_PATH", 400),
    ("EMPTY_DATASET", 400),
    ("EMPTY_TEMPLATE", 400),
    ("INVALID_CAPS", 400),
    ("INVALID_DESCRIPTOR", 400),
    ("INVALID_FILE", 400),
    ("INVALID_QOS", 400),
    ("INVALID_REQUEST", 400),
    ("INVALID_SAMPLE", 400),
    ("RULE_SYNTAX", 400),
    ("SYNTAX", 400),
    ("UNKNOWN_AUDIENCE", 400),
    ("UNKNOWN_DEPENDENCY", 400),
    ("AUTH_REQUIRED", 401),
    ("INVALID_TOKEN", 401),
    ("UNKNOWN_IDENTITY", 401),
    ("ACCOUNT_DISABLED", 403),
    ("FORBIDDEN", 403),
    ("NOT_FOUND", 404),
    ("UNKNOWN_ACCOUNT", 404),
    ("UNKNOWN_DATASET", 404),
    ("UNKNOWN_DEPLOYMENT", 404),
    ("UNKNOWN_FRAMEWORK", 404),
    ("UNKNOWN_INSTANCE", 404),
    ("UNKNOWN_JOB", 404),
    ("UNKNOWN_NODE", 404),
    ("UNKNOWN_SERVICE", 404),
    ("UNKNOWN_SITE", 404),
    ("UNKNOWN_TRANSFER", 404),
    ("METHOD_NOT_ALLOWED", 405),
    ("ADVANCE_IN_REALTIME", 409),
    ("ALREADY_LINKED", 409),
    ("CAPACITY_EXHAUSTED", 409),
    ("DUPLICATE_CLIENT", 409),
    ("DUPLICATE_DATASET", 409),
    ("DUPLICATE_FRAMEWORK", 409),
    ("DUPLICATE_JOB", 409),
    ("DUPLICATE_NODE", 409),
    ("DUPLICATE_SERVICE", 409),
    ("DUPLICATE_SITE", 409),
    ("INVALID_STATE", 409),
    ("NO_ELIGIBLE_SITE", 409),
    ("NO_HEADROOM", 409),
    ("NO_PENDING_DEMAND", 409),
    ("SITE_DOWN", 409),
    ("SOURCE_INCOMPLETE", 409),
    ("STALE_SAMPLE", 409),
    ("UNSUPPORTED_CLASS", 409),
    ("PAYLOAD_TOO_LARGE", 413),
    ("TEMPLATE_TOO_LARGE", 413),
    ("INTERNAL", 500),
    ("JOURNAL_ERROR", 500),
];

pub fn status_of(code: &str) -> Option<u16> {
    ERROR_TABLE.iter().find(|(c, _)| *c == code).map(|(_, s)| *s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl ApiError {
    /// Builds an error whose status comes from [`ERROR_TABLE`]. Unlisted
    /// codes become `INTERNAL`.
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        match status_of(code) {
            Some(status) => ApiError { status, code: code.to_string(), message: message.into(), detail: None },
            None => ApiError {
                status: 500,
                code: "INTERNAL".into(),
                message: format!("unmapped error code {code}: {}", message.into()),
                detail: None,
            },
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new("BAD_REQUEST", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        ApiError::new("FORBIDDEN", message)
    }

    pub fn auth_required() -> Self {
        ApiError::new("AUTH_REQUIRED", "a bearer token is required")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let detail = serde_json::to_value(&e).ok();
        let mut err = ApiError::new(e.code(), e.to_string());
        err.detail = detail;
        err
    }
}

impl From<JournalError> for ApiError {
    fn from(e: JournalError) -> Self {
        ApiError::new("JOURNAL_ERROR", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, axum::Json(self)).into_response()
    }
}
