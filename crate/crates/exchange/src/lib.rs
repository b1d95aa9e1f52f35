//! The exchange as a service: pseudonymous registration, the question
//! lifecycle over HTTP/JSON, and an append-only event log from which all
//! state is rebuilt.

pub mod config;
pub mod demo;
pub mod error;
pub mod events;
pub mod http;
pub mod service;
pub mod state;
pub mod view;

pub use config::{ClockMode, ServiceConfig};
pub use error::ServiceError;
pub use events::{Capability, Event, EventBody, EventLog, LogError};
pub use service::{ApiRequest, ApiResponse, Method, Service};
pub use state::{ExchangeState, ReplayError};
