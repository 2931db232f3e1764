//! HTTP surfaces of the data plane.
//!
//! Agents authenticate with `Authorization: Bearer <token>`; the approval
//! stream also accepts `?token=` because browsers cannot set headers on an
//! event source. An incoming `traceparent` header places the operation
//! under the caller's span, and responses carry the span they produced.

mod admin;
mod agent;
mod approvals;
pub mod error;
mod transcripts;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{HeaderMap, HeaderValue};
use axum::routing::{delete, get, post};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use adp_core::ledger::{format_traceparent, parse_traceparent, TraceContext};
use adp_core::pipeline::approval::ApprovalEvent;
use adp_core::pipeline::Pipeline;
use adp_core::plane::HopContext;

pub use error::ApiError;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    events: broadcast::Sender<ApprovalEvent>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        let (events, _) = broadcast::channel(256);
        let tx = events.clone();
        pipeline.approvals().add_listener(Arc::new(move |e: &ApprovalEvent| {
            let _ = tx.send(e.clone());
        }));
        Self { pipeline, events }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ApprovalEvent> {
        self.events.subscribe()
    }
}

/// Routes for every surface. Static dashboard assets are served from
/// `ui_dir` under `/ui` when given.
pub fn app(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let mut router = Router::new()
        .route("/admin/principals", post(admin::register_principal))
        .route("/admin/credentials", post(admin::issue_credential))
        .route("/admin/credentials/{id}", delete(admin::revoke))
        .route("/admin/policies", post(admin::load_policies))
        .route("/admin/backends", post(admin::register_backend))
        .route("/admin/routing", post(admin::set_routing))
        .route("/admin/broker/{channel}/{offset}", get(admin::inspect))
        .route("/broker/{channel}/produce", post(agent::produce))
        .route("/broker/{channel}/consume", get(agent::consume))
        .route("/mcp/tools", get(agent::list_tools))
        .route("/mcp/call", post(agent::call_tool))
        .route("/ai/complete", post(agent::complete))
        .route("/transcripts", get(transcripts::query))
        .route("/transcripts/verify", get(transcripts::verify))
        .route("/approvals/pending", get(approvals::pending))
        .route("/approvals/stream", get(approvals::stream))
        .route("/approvals/{order_ref}", post(approvals::decide));
    if let Some(dir) = ui_dir {
        router = router.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    router.with_state(state)
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

pub(crate) fn bearer(headers: &HeaderMap) -> String {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default()
        .trim()
        .to_string()
}

pub(crate) fn hop_from(headers: &HeaderMap) -> Result<HopContext, ApiError> {
    match headers.get("traceparent") {
        None => Ok(HopContext::root()),
        Some(v) => {
            let s = v.to_str().map_err(|_| ApiError::BadRequest("malformed traceparent header".into()))?;
            let ctx = parse_traceparent(s).map_err(|e| ApiError::BadRequest(e.to_string()))?;
            Ok(HopContext::under(ctx))
        }
    }
}

pub(crate) fn traceparent_header(ctx: &TraceContext) -> HeaderMap {
    let mut h = HeaderMap::new();
    if let Ok(v) = HeaderValue::from_str(&format_traceparent(ctx)) {
        h.insert("traceparent", v);
    }
    h
}
