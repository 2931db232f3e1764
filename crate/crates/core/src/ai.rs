//! The model gateway: identity, budgets, rate limits, guardrails and
//! routing in front of model backends. Provider keys stay in the
//! gateway-held [`KeyVault`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{canonical_json, hash_value};
use crate::identity::Resolved;
use crate::ledger::{EventKind, TraceContext};
use crate::mcp::ToolCall;
use crate::plane::{AdminError, AuditError, AuthError, DataPlane, HopContext, OpenSpan};
use crate::policy::{evaluate_guardrails, ActionClass, GuardDirection, GuardrailVerdict, RateVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub tool_schemas: Vec<Value>,
    #[serde(default)]
    pub max_turn_tokens: u64,
}

impl ModelRequest {
    /// Non-system content, the text input guardrails inspect.
    pub fn guarded_input(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "content", rename_all = "snake_case")]
pub enum ModelOutput {
    Text(String),
    ToolCall(ToolCall),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens.saturating_add(self.completion_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub output: ModelOutput,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub cost_per_1k_tokens: u64,
    /// Nominal latency in milliseconds.
    pub nominal_latency: u64,
    /// Handle into the gateway's key vault; the key itself never leaves it.
    pub provider_key_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingStrategy {
    Fixed,
    MinCost,
    MinLatency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub strategy: RoutingStrategy,
    pub allow_list: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("no eligible backend")]
    NoEligibleBackend,
}

/// Pure backend selection; ties go to the lexicographically smallest id.
pub fn select_backend(policy: &RoutingPolicy, descriptors: &[BackendDescriptor]) -> Result<String, RoutingError> {
    let eligible = descriptors.iter().filter(|d| policy.allow_list.contains(&d.id));
    let key = |d: &BackendDescriptor| match policy.strategy {
        RoutingStrategy::Fixed => 0,
        RoutingStrategy::MinCost => d.cost_per_1k_tokens,
        RoutingStrategy::MinLatency => d.nominal_latency,
    };
    eligible
        .min_by(|a, b| key(a).cmp(&key(b)).then_with(|| a.id.cmp(&b.id)))
        .map(|d| d.id.clone())
        .ok_or(RoutingError::NoEligibleBackend)
}

/// Provider key material. Not serializable; `Debug` is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct ProviderKey(String);

impl ProviderKey {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ProviderKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ProviderKey(<redacted>)")
    }
}

#[derive(Debug, Default)]
pub struct KeyVault {
    keys: RwLock<BTreeMap<String, ProviderKey>>,
}

impl KeyVault {
    fn put(&self, handle: &str, key: ProviderKey) {
        self.keys.write().insert(handle.to_string(), key);
    }

    fn get(&self, handle: &str) -> Option<ProviderKey> {
        self.keys.read().get(handle).cloned()
    }

    fn secrets(&self) -> Vec<String> {
        self.keys.read().values().map(|k| k.0.clone()).filter(|s| !s.is_empty()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backend error: {0}")]
pub struct BackendError(pub String);

/// A model provider. Receives the provider key for the call; must be safe
/// for concurrent use.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest, key: &ProviderKey) -> Result<ModelResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelErrorKind {
    AuthenticationFailed,
    InvalidRequest,
    RateLimited,
    GuardrailBlockedInput,
    GuardrailBlockedOutput,
    BudgetExhausted,
    BackendUnavailable,
}

impl ModelErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelErrorKind::AuthenticationFailed => "authentication_failed",
            ModelErrorKind::InvalidRequest => "invalid_request",
            ModelErrorKind::RateLimited => "rate_limited",
            ModelErrorKind::GuardrailBlockedInput => "guardrail_blocked_input",
            ModelErrorKind::GuardrailBlockedOutput => "guardrail_blocked_output",
            ModelErrorKind::BudgetExhausted => "budget_exhausted",
            ModelErrorKind::BackendUnavailable => "backend_unavailable",
        }
    }
}

/// The single agent-visible model failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("model call failed")]
pub struct ModelError;

#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub result: Result<ModelResponse, ModelErrorKind>,
    pub span: TraceContext,
}

impl ModelOutcome {
    pub fn into_agent(self) -> Result<ModelResponse, ModelError> {
        self.result.map_err(|_| ModelError)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackendRegistrationError {
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error("duplicate backend `{0}`")]
    DuplicateBackend(String),
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
}

struct RegisteredBackend {
    descriptor: BackendDescriptor,
    handler: Arc<dyn ModelBackend>,
}

#[derive(Default)]
pub(crate) struct ModelRegistry {
    backends: RwLock<BTreeMap<String, Arc<RegisteredBackend>>>,
    vault: KeyVault,
    routing: RwLock<Option<RoutingPolicy>>,
    invocations: Mutex<BTreeMap<String, u64>>,
}

const KEY_SCRUB: &str = "[REDACTED-KEY]";

fn scrub(secrets: &[String], output: ModelOutput) -> (ModelOutput, bool) {
    let hit = |s: &str| secrets.iter().any(|k| s.contains(k.as_str()));
    let clean = |s: &str| secrets.iter().fold(s.to_string(), |acc, k| acc.replace(k.as_str(), KEY_SCRUB));
    match output {
        ModelOutput::Text(t) if hit(&t) => (ModelOutput::Text(clean(&t)), true),
        ModelOutput::ToolCall(c) => {
            let text = canonical_json(&c.args);
            if hit(&text) || hit(&c.tool) {
                let args = serde_json::from_str(&clean(&text)).unwrap_or(Value::Null);
                (ModelOutput::ToolCall(ToolCall { tool: clean(&c.tool), args }), true)
            } else {
                (ModelOutput::ToolCall(c), false)
            }
        }
        other => (other, false),
    }
}

impl DataPlane {
    pub fn register_backend(
        &self,
        admin_token: &str,
        descriptor: BackendDescriptor,
        key: ProviderKey,
        handler: Arc<dyn ModelBackend>,
    ) -> Result<(), BackendRegistrationError> {
        self.authenticate_admin(admin_token, "register_backend")?;
        if descriptor.id.is_empty() || descriptor.provider_key_ref.is_empty() {
            return Err(BackendRegistrationError::MalformedDescriptor("empty id or key handle".into()));
        }
        let mut backends = self.models.backends.write();
        if backends.contains_key(&descriptor.id) {
            return Err(BackendRegistrationError::DuplicateBackend(descriptor.id));
        }
        self.models.vault.put(&descriptor.provider_key_ref, key);
        backends.insert(descriptor.id.clone(), Arc::new(RegisteredBackend { descriptor, handler }));
        Ok(())
    }

    pub fn set_routing(&self, admin_token: &str, policy: RoutingPolicy) -> Result<(), AdminError> {
        self.authenticate_admin(admin_token, "set_routing")?;
        if policy.allow_list.is_empty() {
            return Err(AdminError::Policy(crate::policy::PolicyError::Invalid("routing allow_list is empty".into())));
        }
        *self.models.routing.write() = Some(policy);
        Ok(())
    }

    pub fn backend_descriptors(&self) -> Vec<BackendDescriptor> {
        self.models.backends.read().values().map(|b| b.descriptor.clone()).collect()
    }

    /// Backend invocations so far, by backend id.
    pub fn backend_invocations(&self) -> BTreeMap<String, u64> {
        self.models.invocations.lock().clone()
    }

    pub fn total_backend_invocations(&self) -> u64 {
        self.models.invocations.lock().values().sum()
    }

    /// Every provider secret held by the vault, for key-confinement audits.
    pub fn provider_secrets(&self) -> Vec<String> {
        self.models.vault.secrets()
    }

    fn model_denied(
        &self,
        span: OpenSpan,
        r: &Resolved,
        client: Option<&str>,
        kind: ModelErrorKind,
        detail: Value,
    ) -> Result<ModelOutcome, AuditError> {
        let body = json!({"op": "complete", "error_kind": kind.as_str(), "detail": detail});
        self.emit_at(span, EventKind::ModelDenied, &r.principal.id, client, body, None)?;
        Ok(ModelOutcome { result: Err(kind), span: span.ctx })
    }

    fn guardrail_blocked(
        &self,
        span: OpenSpan,
        r: &Resolved,
        client: Option<&str>,
        kind: ModelErrorKind,
        mut body: Value,
    ) -> Result<ModelOutcome, AuditError> {
        body["op"] = json!("complete");
        body["error_kind"] = json!(kind.as_str());
        self.emit_at(span, EventKind::GuardrailVerdict, &r.principal.id, client, body, None)?;
        Ok(ModelOutcome { result: Err(kind), span: span.ctx })
    }

    /// Runs one model call through the gateway. Every outcome, including
    /// denials, produces exactly one transcript record.
    pub fn complete(&self, hop: &HopContext, token: &str, request: &ModelRequest) -> Result<ModelOutcome, AuditError> {
        self.count_op("complete");
        let r = match self.authenticate(hop, token, "complete") {
            Ok(r) => r,
            Err(AuthError::Audit(a)) => return Err(a),
            Err(AuthError::AuthenticationFailed) => {
                return Ok(ModelOutcome {
                    result: Err(ModelErrorKind::AuthenticationFailed),
                    span: hop.parent.unwrap_or_else(|| self.new_root_context()),
                })
            }
        };
        let span = self.open_span(hop);
        let client = hop.binding.as_deref().or(r.scope.sole_client()).map(str::to_string);
        let client = client.as_deref();
        let request_hash = hex::encode(hash_value(&serde_json::to_value(request).unwrap_or(Value::Null)));
        if request.messages.is_empty() {
            return self.model_denied(span, &r, client, ModelErrorKind::InvalidRequest, json!("no messages"));
        }
        let policy = self.policy();
        let now = self.clock.now();

        let budget = match &r.scope.budgets_ref {
            Some(id) => match policy.budget(id) {
                Some(b) => Some(b.clone()),
                None => {
                    return self.model_denied(span, &r, client, ModelErrorKind::BudgetExhausted, json!({"unknown_budget_policy": id}))
                }
            },
            None => None,
        };
        if let Some(b) = &budget {
            let remaining = self.budgets.remaining(&r.principal.id, b, now);
            if remaining == 0 {
                return self.model_denied(span, &r, client, ModelErrorKind::BudgetExhausted, json!({"budget_policy": b.id, "remaining": 0}));
            }
        }
        for p in policy.rates_for(&r.scope.rate_refs, ActionClass::ModelCall) {
            if self.rates.check_rate(&r.principal.id, p, now) == RateVerdict::Deny {
                return self.model_denied(span, &r, client, ModelErrorKind::RateLimited, json!({"rate_policy": p.id}));
            }
        }

        let input = request.guarded_input();
        let input_verdict = evaluate_guardrails(policy.guardrails(), GuardDirection::Input, &input);
        if let GuardrailVerdict::Blocked(rule) = &input_verdict {
            return self.guardrail_blocked(
                span,
                &r,
                client,
                ModelErrorKind::GuardrailBlockedInput,
                json!({"direction": "input", "rule": rule, "request_hash": request_hash}),
            );
        }

        let routing = self.models.routing.read().clone();
        let descriptors = self.backend_descriptors();
        let chosen = routing
            .as_ref()
            .ok_or(RoutingError::NoEligibleBackend)
            .and_then(|p| select_backend(p, &descriptors));
        let backend = match chosen.ok().and_then(|id| self.models.backends.read().get(&id).cloned()) {
            Some(b) => b,
            None => return self.model_denied(span, &r, client, ModelErrorKind::BackendUnavailable, json!("no eligible backend")),
        };
        let Some(key) = self.models.vault.get(&backend.descriptor.provider_key_ref) else {
            return self.model_denied(span, &r, client, ModelErrorKind::BackendUnavailable, json!("missing provider key"));
        };
        *self.models.invocations.lock().entry(backend.descriptor.id.clone()).or_insert(0) += 1;
        let response = match backend.handler.complete(request, &key) {
            Ok(resp) => resp,
            Err(e) => {
                return self.model_denied(
                    span,
                    &r,
                    client,
                    ModelErrorKind::BackendUnavailable,
                    json!({"backend": backend.descriptor.id, "error": e.0}),
                )
            }
        };
        let (output, scrubbed) = scrub(&self.models.vault.secrets(), response.output);
        let usage = response.usage;
        let charge = budget.as_ref().map(|b| self.budgets.charge_post_hoc(&r.principal.id, b, usage.total(), now));

        let (output_text, rules): (String, Vec<_>) = match &output {
            ModelOutput::Text(t) => (t.clone(), policy.guardrails().iter().collect()),
            ModelOutput::ToolCall(c) => (
                canonical_json(&serde_json::to_value(c).unwrap_or(Value::Null)),
                policy.guardrails().iter().filter(|g| !g.is_schema()).collect(),
            ),
        };
        let output_verdict = evaluate_guardrails(rules, GuardDirection::Output, &output_text);
        let mut body = json!({
            "backend": backend.descriptor.id,
            "request_hash": request_hash,
            "usage": usage,
            "budget": charge,
            "input_verdict": input_verdict,
            "output_verdict": output_verdict,
            "key_scrubbed": scrubbed,
        });
        if let GuardrailVerdict::Blocked(rule) = &output_verdict {
            body["direction"] = json!("output");
            body["rule"] = json!(rule);
            return self.guardrail_blocked(span, &r, client, ModelErrorKind::GuardrailBlockedOutput, body);
        }
        body["op"] = json!("complete");
        body["output"] = serde_json::to_value(&output).unwrap_or(Value::Null);
        self.emit_at(span, EventKind::ModelCall, &r.principal.id, client, body, None)?;
        Ok(ModelOutcome { result: Ok(ModelResponse { output, usage }), span: span.ctx })
    }
}
