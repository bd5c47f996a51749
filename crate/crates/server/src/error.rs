use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use vqa_core::dataset::{CleanReport, ValidationOutcome};

/// Every machine-readable error code the API can return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    MissingPart,
    InvalidRequest,
    PayloadTooLarge,
    DatasetInvalid,
    DatasetNotFound,
    ModelNotSelected,
    JobAlreadyRunning,
    JobNotFound,
    ModelNotReady,
    ImageInvalid,
    EmptyQuestion,
    NoValidEntries,
    ExtractorUnavailable,
    SampleUnavailable,
    NotFound,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 16] = [
        ErrorCode::MissingPart,
        ErrorCode::InvalidRequest,
        ErrorCode::PayloadTooLarge,
        ErrorCode::DatasetInvalid,
        ErrorCode::DatasetNotFound,
        ErrorCode::ModelNotSelected,
        ErrorCode::JobAlreadyRunning,
        ErrorCode::JobNotFound,
        ErrorCode::ModelNotReady,
        ErrorCode::ImageInvalid,
        ErrorCode::EmptyQuestion,
        ErrorCode::NoValidEntries,
        ErrorCode::ExtractorUnavailable,
        ErrorCode::SampleUnavailable,
        ErrorCode::NotFound,
        ErrorCode::Internal,
    ];

    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            MissingPart | InvalidRequest | ModelNotSelected | EmptyQuestion => StatusCode::BAD_REQUEST,
            PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            DatasetInvalid | ImageInvalid | NoValidEntries => StatusCode::UNPROCESSABLE_ENTITY,
            DatasetNotFound | JobNotFound | ModelNotReady | NotFound => StatusCode::NOT_FOUND,
            JobAlreadyRunning => StatusCode::CONFLICT,
            ExtractorUnavailable => StatusCode::BAD_GATEWAY,
            SampleUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn as_str(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

/// Banner shown by the UI; a direct projection of a validation outcome.
pub type BannerPayload = ValidationOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub http_status: u16,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banner: Option<BannerPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CleanReport>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            http_status: code.status().as_u16(),
            message: message.into(),
            banner: None,
            report: None,
        }
    }

    pub fn internal(err: impl std::fmt::Display) -> Self {
        tracing::error!("internal error: {err}");
        Self::new(ErrorCode::Internal, err.to_string())
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.code.status();
        let mut resp = (status, Json(self)).into_response();
        resp.headers_mut()
            .insert(header::CACHE_CONTROL, header::HeaderValue::from_static("no-store"));
        resp
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
