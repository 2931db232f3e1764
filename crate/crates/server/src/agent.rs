use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use adp_core::ai::{ModelRequest, ModelResponse};
use adp_core::mcp::{ToolCall, ToolInfo};

use crate::{bearer, hop_from, traceparent_header, ApiError, AppState};

pub(crate) async fn produce(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(channel): Path<String>,
    payload: Bytes,
) -> Result<(HeaderMap, Json<Value>), ApiError> {
    let hop = hop_from(&headers)?;
    let p = st.pipeline.plane().produce(&hop, &bearer(&headers), &channel, &payload)?;
    Ok((traceparent_header(&p.span), Json(json!({"offset": p.offset}))))
}

#[derive(Debug, Deserialize)]
pub(crate) struct ConsumeParams {
    #[serde(default)]
    offset: u64,
    #[serde(default = "one")]
    max: u64,
}

fn one() -> u64 {
    1
}

/// Payloads are returned base64-encoded; they are opaque bytes.
pub(crate) async fn consume(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(channel): Path<String>,
    Query(q): Query<ConsumeParams>,
) -> Result<(HeaderMap, Json<Value>), ApiError> {
    let hop = hop_from(&headers)?;
    let c = st.pipeline.plane().consume(&hop, &bearer(&headers), &channel, q.offset, q.max)?;
    let payloads: Vec<String> = c.payloads.iter().map(|p| STANDARD.encode(p)).collect();
    Ok((traceparent_header(&c.span), Json(json!({"payloads": payloads, "next_offset": c.next.offset}))))
}

pub(crate) async fn list_tools(State(st): State<AppState>, headers: HeaderMap) -> Result<Json<Vec<ToolInfo>>, ApiError> {
    Ok(Json(st.pipeline.plane().list_tools(&bearer(&headers))?))
}

pub(crate) async fn call_tool(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(call): Json<ToolCall>,
) -> Result<(HeaderMap, Json<Value>), ApiError> {
    let hop = hop_from(&headers)?;
    let out = st.pipeline.plane().call_tool(&hop, &bearer(&headers), &call)?;
    let span = out.span;
    let body = out.result.into_agent().map_err(|_| ApiError::CallFailed("tool call failed"))?;
    Ok((traceparent_header(&span), Json(body)))
}

pub(crate) async fn complete(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<ModelRequest>,
) -> Result<(HeaderMap, Json<ModelResponse>), ApiError> {
    let hop = hop_from(&headers)?;
    let out = st.pipeline.plane().complete(&hop, &bearer(&headers), &req)?;
    let span = out.span;
    let resp = out.into_agent().map_err(|_| ApiError::CallFailed("model call failed"))?;
    Ok((traceparent_header(&span), Json(resp)))
}
