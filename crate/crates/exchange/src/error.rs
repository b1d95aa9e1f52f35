use qx_core::adjudication::AdjudicationError;
use qx_core::ledger::LedgerError;
use qx_core::protocol::ProtocolError;
use serde_json::{json, Value};
use thiserror::Error;

/// Errors surfaced by the exchange, each mapped to an HTTP status.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("authentication required")]
    Unauthenticated,
    #[error("not found")]
    NotFound,
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    PaymentRequired(String),
    #[error("{0}")]
    Gone(String),
    #[error("event log: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Unauthenticated => 401,
            ServiceError::NotFound => 404,
            ServiceError::Forbidden(_) => 403,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Conflict(_) => 409,
            ServiceError::PaymentRequired(_) => 402,
            ServiceError::Gone(_) => 410,
            ServiceError::Storage(_) | ServiceError::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Unauthenticated => "unauthenticated",
            ServiceError::NotFound => "not_found",
            ServiceError::Forbidden(_) => "forbidden",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::PaymentRequired(_) => "payment_required",
            ServiceError::Gone(_) => "gone",
            ServiceError::Storage(_) => "storage_failure",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn to_body(&self) -> Value {
        json!({ "error": self.code(), "message": self.to_string() })
    }
}

impl From<ProtocolError> for ServiceError {
    fn from(e: ProtocolError) -> Self {
        let msg = e.to_string();
        match e {
            ProtocolError::InvalidSpec(_) | ProtocolError::InvalidTerms(_) => ServiceError::BadRequest(msg),
            ProtocolError::WrongState { .. } => ServiceError::Conflict(msg),
            ProtocolError::InsufficientFunds { .. } => ServiceError::PaymentRequired(msg),
            ProtocolError::DeadlinePassed => ServiceError::Gone(msg),
            ProtocolError::SelfDealing | ProtocolError::NotSeller | ProtocolError::NotBuyer => {
                ServiceError::Forbidden(msg)
            }
            ProtocolError::Ledger(inner) => inner.into(),
            ProtocolError::EscrowMismatch { .. } | ProtocolError::MissingHouseAccount(_) => ServiceError::Internal(msg),
        }
    }
}

impl From<AdjudicationError> for ServiceError {
    fn from(e: AdjudicationError) -> Self {
        let msg = e.to_string();
        match e {
            AdjudicationError::NotArbiter => ServiceError::Forbidden(msg),
            AdjudicationError::WrongPolicy(_) | AdjudicationError::EmptyRationale => ServiceError::BadRequest(msg),
            AdjudicationError::WrongState(_) => ServiceError::Conflict(msg),
            AdjudicationError::Protocol(p) => p.into(),
        }
    }
}

impl From<LedgerError> for ServiceError {
    fn from(e: LedgerError) -> Self {
        match e {
            // the ledger message names accounts; keep it out of responses
            LedgerError::InsufficientFunds { .. } => ServiceError::PaymentRequired("insufficient funds".into()),
            LedgerError::NonPositiveAmount => ServiceError::BadRequest(e.to_string()),
            LedgerError::UnknownAccount(_) => ServiceError::NotFound,
            other => ServiceError::Internal(other.to_string()),
        }
    }
}
