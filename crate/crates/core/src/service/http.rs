//! HTTP transport for [`Service`](super::Service).

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{Outcome, Service};

/// Request bodies beyond this are rejected before parsing.
const BODY_LIMIT: usize = 16 * 1024;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpretRequest {
    text: String,
}

async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    resp
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": { "kind": "MalformedBody", "message": message } }))).into_response()
}

async fn interpret(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req: InterpretRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e.to_string()),
    };
    let svc2 = Arc::clone(&svc);
    let result = tokio::task::spawn_blocking(move || svc2.handle_interpret(&req.text)).await;
    let (outcome, resp) = match result {
        Ok(r) => r,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let status = match outcome {
        Outcome::Ok => StatusCode::OK,
        Outcome::BadRequest => StatusCode::BAD_REQUEST,
        Outcome::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
    };
    (status, Json(resp)).into_response()
}

async fn state(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.state()).into_response()
}

async fn reset(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.reset()).into_response()
}

async fn registry(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.registry().clone()).into_response()
}

async fn health(State(svc): State<Arc<Service>>) -> Response {
    Json(json!({ "status": "ok", "model": svc.fingerprint() })).into_response()
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/api/interpret", post(interpret))
        .route("/api/state", get(state))
        .route("/api/reset", post(reset))
        .route("/api/registry", get(registry))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(middleware::from_fn(cors))
        .with_state(svc)
}

pub async fn serve(svc: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc)).await
}
