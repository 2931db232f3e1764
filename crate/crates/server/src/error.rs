use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use adp_core::ai::BackendRegistrationError;
use adp_core::broker::BrokerError;
use adp_core::identity::IdentityError;
use adp_core::plane::{AdminError, AuditError, AuthError};
use adp_core::pipeline::approval::ApprovalError;

/// Every error the HTTP layer returns, with its status code.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("unauthorized")]
    Unauthorized,
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    /// Uniform gateway failure; the kind is only in the transcript.
    #[error("{0}")]
    CallFailed(&'static str),
    #[error("audit unavailable")]
    Audit(#[from] AuditError),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::AuthenticationFailed => StatusCode::UNAUTHORIZED,
            ApiError::Unauthorized | ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::CallFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Audit(_) => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Audit(e) = &self {
            tracing::error!("{e}");
        }
        (self.status(), Json(json!({"error": self.to_string()}))).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AuthenticationFailed => ApiError::AuthenticationFailed,
            AuthError::Audit(a) => ApiError::Audit(a),
        }
    }
}

impl From<AdminError> for ApiError {
    fn from(e: AdminError) -> Self {
        match e {
            AdminError::AuthenticationFailed => ApiError::AuthenticationFailed,
            AdminError::Unauthorized => ApiError::Unauthorized,
            AdminError::Identity(e @ (IdentityError::UnknownPrincipal(_) | IdentityError::UnknownCredential)) => {
                ApiError::NotFound(e.to_string())
            }
            AdminError::Identity(e @ IdentityError::DuplicatePrincipal(_)) => ApiError::Conflict(e.to_string()),
            AdminError::Identity(e) => ApiError::BadRequest(e.to_string()),
            AdminError::Policy(e) => ApiError::BadRequest(e.to_string()),
            AdminError::Audit(a) => ApiError::Audit(a),
        }
    }
}

impl From<BackendRegistrationError> for ApiError {
    fn from(e: BackendRegistrationError) -> Self {
        match e {
            BackendRegistrationError::Admin(a) => a.into(),
            BackendRegistrationError::DuplicateBackend(_) => ApiError::Conflict(e.to_string()),
            BackendRegistrationError::MalformedDescriptor(_) => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<BrokerError> for ApiError {
    fn from(e: BrokerError) -> Self {
        match e {
            BrokerError::AuthenticationFailed => ApiError::AuthenticationFailed,
            BrokerError::Unauthorized => ApiError::Unauthorized,
            BrokerError::ChannelAccessDenied => ApiError::Forbidden(e.to_string()),
            BrokerError::UnknownChannel => ApiError::NotFound(e.to_string()),
            BrokerError::MalformedChannel | BrokerError::OffsetOutOfRange | BrokerError::InvalidCursor => {
                ApiError::BadRequest(e.to_string())
            }
            BrokerError::Audit(a) => ApiError::Audit(a),
        }
    }
}

impl From<ApprovalError> for ApiError {
    fn from(e: ApprovalError) -> Self {
        match e {
            ApprovalError::AuthenticationFailed => ApiError::AuthenticationFailed,
            ApprovalError::Unauthorized => ApiError::Unauthorized,
            ApprovalError::AlreadyDecided => ApiError::Conflict(e.to_string()),
            ApprovalError::UnknownOrder => ApiError::NotFound(e.to_string()),
            ApprovalError::Audit(a) => ApiError::Audit(a),
        }
    }
}
