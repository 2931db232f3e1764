use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use adp_core::ai::{BackendDescriptor, ModelBackend, ProviderKey, RoutingPolicy};
use adp_core::broker::Envelope;
use adp_core::identity::{Principal, Scope};
use adp_core::pipeline::scripted::ScriptedBackend;
use adp_core::policy::PolicyConfig;

use crate::{bearer, ApiError, AppState};

pub(crate) async fn register_principal(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(principal): Json<Principal>,
) -> Result<StatusCode, ApiError> {
    st.pipeline.plane().register_principal(&bearer(&headers), principal)?;
    Ok(StatusCode::CREATED)
}

#[derive(Debug, Deserialize)]
pub(crate) struct IssueRequest {
    principal_id: String,
    #[serde(default)]
    scope: Scope,
    #[serde(default)]
    ttl: Option<u64>,
}

pub(crate) async fn issue_credential(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<IssueRequest>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let cred = st.pipeline.plane().issue_credential(&bearer(&headers), &req.principal_id, req.scope, req.ttl)?;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(cred).expect("credential serializes"))))
}

pub(crate) async fn revoke(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let cred = st.pipeline.plane().revoke(&bearer(&headers), &id)?;
    Ok(Json(json!({"id": cred.id, "principal_id": cred.principal_id, "revoked": true})))
}

pub(crate) async fn load_policies(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(config): Json<PolicyConfig>,
) -> Result<StatusCode, ApiError> {
    st.pipeline.plane().load_policies(&bearer(&headers), config)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
pub(crate) struct BackendRequest {
    descriptor: BackendDescriptor,
    provider_key: String,
    /// Handler implementation; only the scripted backend ships in-process.
    #[serde(default = "scripted")]
    handler: String,
}

fn scripted() -> String {
    "scripted".into()
}

pub(crate) async fn register_backend(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<BackendRequest>,
) -> Result<StatusCode, ApiError> {
    let scenario = st.pipeline.scenario();
    let handler: Arc<dyn ModelBackend> = match req.handler.as_str() {
        "scripted" => Arc::new(ScriptedBackend::new(scenario.seed, scenario.order_targets.clone())),
        other => return Err(ApiError::BadRequest(format!("unknown backend handler `{other}`"))),
    };
    st.pipeline.plane().register_backend(&bearer(&headers), req.descriptor, ProviderKey::new(req.provider_key), handler)?;
    Ok(StatusCode::CREATED)
}

pub(crate) async fn set_routing(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(policy): Json<RoutingPolicy>,
) -> Result<StatusCode, ApiError> {
    st.pipeline.plane().set_routing(&bearer(&headers), policy)?;
    Ok(StatusCode::NO_CONTENT)
}

pub(crate) async fn inspect(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path((channel, offset)): Path<(String, u64)>,
) -> Result<Json<Envelope>, ApiError> {
    Ok(Json(st.pipeline.plane().inspect_envelope(&bearer(&headers), &channel, offset)?))
}
