use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use medledger_core::chain::TxRejection;
use medledger_core::vault::VaultError;
use medledger_core::{DenyReason, LedgerError};
use serde::Serialize;

/// Error body returned by every endpoint. `code` is the stable,
/// machine-readable part; `message` is for humans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn unauthorized(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, code, message)
    }

    pub fn forbidden(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn denied(reason: DenyReason, patient_id: u64) -> Self {
        Self::forbidden(
            reason.as_str(),
            format!("access to patient {patient_id} denied"),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(Body {
            code: self.code,
            message: &self.message,
        });
        (self.status, body).into_response()
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let message = e.to_string();
        match e {
            LedgerError::Rejected(TxRejection::Rule(rule)) => {
                ApiError::bad_request(rule.code(), message)
            }
            LedgerError::Rejected(TxRejection::Fault(fault)) => {
                ApiError::bad_request(fault.code(), message)
            }
            LedgerError::NothingToMine => {
                ApiError::new(StatusCode::CONFLICT, "NothingToMine", message)
            }
            LedgerError::NoRecords(_) => ApiError::not_found("NoRecords", message),
            LedgerError::Vault(v) => v.into(),
            _ => ApiError::internal(message),
        }
    }
}

impl From<VaultError> for ApiError {
    fn from(e: VaultError) -> Self {
        let message = e.to_string();
        match e {
            VaultError::InvalidRecord(_) => ApiError::bad_request("InvalidRecord", message),
            VaultError::UnknownIdentity(_) => ApiError::bad_request("UnknownIdentity", message),
            VaultError::NotFound(_) => ApiError::internal(message),
            VaultError::CorruptBlob(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "CorruptBlob", message)
            }
            VaultError::AuthFailure => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "AuthFailure", message)
            }
            VaultError::StorageFull => {
                ApiError::new(StatusCode::INSUFFICIENT_STORAGE, "StorageFull", message)
            }
            VaultError::Io(_) => ApiError::internal(message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request("BadRequest", e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request("BadRequest", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request("BadRequest", e.body_text())
    }
}
