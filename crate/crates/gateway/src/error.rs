use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use viz_core::billing::BillingError;
use viz_core::compliance::Violation;
use viz_core::marketplace::MarketError;
use viz_core::registry::RegistryError;

/// JSON error body: a stable machine code plus a human message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message: message.into(),
                violations: Vec::new(),
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

fn registry_status(e: &RegistryError) -> (StatusCode, &'static str) {
    match e {
        RegistryError::PublicationRefused(_) => (StatusCode::UNPROCESSABLE_ENTITY, "publication-refused"),
        RegistryError::InvalidManifest(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-manifest"),
        RegistryError::CorruptBundle(_) => (StatusCode::UNPROCESSABLE_ENTITY, "corrupt-bundle"),
        RegistryError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
        RegistryError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        RegistryError::InvalidShape(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-shape"),
        RegistryError::InvalidListing(_) => (StatusCode::BAD_REQUEST, "invalid-listing"),
        RegistryError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
        RegistryError::Gone(_) => (StatusCode::GONE, "delisted"),
        RegistryError::NotApplicable(_) => (StatusCode::CONFLICT, "not-applicable"),
        RegistryError::Compliance(_) => (StatusCode::INTERNAL_SERVER_ERROR, "provenance-refused"),
    }
}

fn billing_status(e: &BillingError) -> (StatusCode, &'static str) {
    match e {
        BillingError::PaymentRequired(_) => (StatusCode::PAYMENT_REQUIRED, "payment-required"),
        BillingError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
        BillingError::TooEarly(_) => (StatusCode::CONFLICT, "period-not-elapsed"),
        BillingError::PeriodOpen(_) => (StatusCode::CONFLICT, "period-open"),
        BillingError::PeriodClosed(_) => (StatusCode::CONFLICT, "period-closed"),
        BillingError::InvalidLicense(_) => (StatusCode::BAD_REQUEST, "invalid-license"),
        BillingError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
    }
}

impl From<MarketError> for ApiError {
    fn from(e: MarketError) -> Self {
        let (status, code) = match &e {
            MarketError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            MarketError::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            MarketError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            MarketError::InvalidShape(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-shape"),
            MarketError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "bad-request"),
            MarketError::Registry(r) => registry_status(r),
            MarketError::Billing(b) => billing_status(b),
            MarketError::Storage(_) | MarketError::CorruptLog(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
            MarketError::Unavailable | MarketError::ReadOnly => (StatusCode::SERVICE_UNAVAILABLE, "unavailable"),
        };
        let mut err = ApiError::new(status, code, e.to_string());
        if let MarketError::Registry(RegistryError::PublicationRefused(v)) = e {
            err.body.violations = v;
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
