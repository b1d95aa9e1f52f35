//! HTTP/JSON transport over [`Service::handle`].

use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::Value;
use tokio::net::TcpListener;

use crate::error::ServiceError;
use crate::service::{ApiRequest, ApiResponse, Method, Service};

pub type Shared = Arc<Mutex<Service>>;

pub fn router(service: Shared) -> Router {
    Router::new().fallback(dispatch).with_state(service)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(|t| t.trim().to_owned())
}

fn reply(resp: ApiResponse) -> Response {
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(resp.body)).into_response()
}

async fn dispatch(State(service): State<Shared>, method: HttpMethod, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        _ => {
            let e = ServiceError::BadRequest("unsupported method".into());
            return (StatusCode::METHOD_NOT_ALLOWED, Json(e.to_body())).into_response();
        }
    };
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        Value::Null
    } else {
        match serde_json::from_slice(&body) {
            Ok(v) => v,
            Err(e) => return reply(ApiResponse { status: 400, body: ServiceError::BadRequest(format!("invalid JSON: {e}")).to_body() }),
        }
    };
    let req = ApiRequest { method, path: uri.path().to_owned(), credential: bearer(&headers), body };
    // handle() fsyncs, so keep it off the async workers
    let result = tokio::task::spawn_blocking(move || {
        let mut svc = service.lock().unwrap_or_else(|p| p.into_inner());
        svc.handle(&req)
    })
    .await;
    match result {
        Ok(resp) => reply(resp),
        Err(e) => reply(ApiResponse { status: 500, body: ServiceError::Internal(e.to_string()).to_body() }),
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve_until(
    listener: TcpListener,
    service: Service,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(service)));
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
