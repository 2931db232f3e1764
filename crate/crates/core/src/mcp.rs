//! The tool gateway: the only path from agents to upstream systems.
//!
//! Every call runs the same pipeline: visibility, reserved-parameter
//! rejection, argument validation, rate limiting, scope injection, upstream
//! invocation, redaction, and exactly one transcript record.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::hash_value;
use crate::identity::Resolved;
use crate::ledger::{EventKind, TraceContext};
use crate::plane::{AdminError, AuditError, DataPlane, HopContext, OpenSpan};
use crate::policy::acl::tool_pattern_matches;
use crate::policy::schema::Schema;
use crate::policy::{redact_value, ActionClass, RateVerdict};

/// Argument names only the gateway may supply.
pub const RESERVED_PARAMS: &[&str] = &["client_id"];

/// The only error text agents ever see from a tool call.
pub const TOOL_ERROR: &str = "tool call failed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub params_schema: Value,
    pub scoped: bool,
    /// The reserved parameter a scoped tool receives from the gateway.
    #[serde(default)]
    pub injected_param: Option<String>,
    pub action_class: ActionClass,
    pub upstream_id: String,
}

/// What an agent is shown for a visible tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub params_schema: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    AccessDenied,
    RateLimited,
    UpstreamError,
    InvalidArgs,
}

impl ToolErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolErrorKind::AccessDenied => "access_denied",
            ToolErrorKind::RateLimited => "rate_limited",
            ToolErrorKind::UpstreamError => "upstream_error",
            ToolErrorKind::InvalidArgs => "invalid_args",
        }
    }
}

/// Gateway-side result; `error_kind` stays in infrastructure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolResult {
    pub ok: bool,
    pub body: Value,
    pub error_kind: Option<ToolErrorKind>,
}

/// The single agent-visible tool failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("tool call failed")]
pub struct ToolError;

impl ToolResult {
    fn failed(kind: ToolErrorKind) -> Self {
        Self { ok: false, body: Value::Null, error_kind: Some(kind) }
    }

    pub fn into_agent(self) -> Result<Value, ToolError> {
        if self.ok {
            Ok(self.body)
        } else {
            Err(ToolError)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToolOutcome {
    pub result: ToolResult,
    pub span: TraceContext,
}

/// What an upstream handler receives.
#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamCall {
    pub tool: String,
    /// Injected by the gateway from the caller's scope; `None` for
    /// unscoped tools.
    pub client_id: Option<String>,
    pub args: Value,
    pub trace: TraceContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("upstream error: {0}")]
pub struct UpstreamError(pub String);

/// In-process upstream plug-in contract: scope, args and trace context in,
/// document out. Implementations must tolerate concurrent calls.
pub trait Upstream: Send + Sync {
    fn invoke(&self, call: &UpstreamCall) -> Result<Value, UpstreamError>;
}

impl<F> Upstream for F
where
    F: Fn(&UpstreamCall) -> Result<Value, UpstreamError> + Send + Sync,
{
    fn invoke(&self, call: &UpstreamCall) -> Result<Value, UpstreamError> {
        self(call)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistrationError {
    #[error(transparent)]
    Admin(#[from] AdminError),
    #[error("duplicate tool `{0}`")]
    DuplicateTool(String),
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
}

struct Registered {
    descriptor: ToolDescriptor,
    schema: Schema,
    upstream: Arc<dyn Upstream>,
}

#[derive(Default)]
pub(crate) struct ToolRegistry {
    tools: RwLock<BTreeMap<String, Arc<Registered>>>,
}

impl ToolDescriptor {
    pub fn validate(&self) -> Result<Schema, String> {
        if self.name.is_empty()
            || !self.name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
        {
            return Err(format!("invalid tool name `{}`", self.name));
        }
        let schema = Schema::from_value(self.params_schema.clone())?;
        let declared = schema.property_names();
        let required = self.params_schema.get("required").and_then(Value::as_array).cloned().unwrap_or_default();
        for r in RESERVED_PARAMS {
            if declared.iter().any(|d| d == r) || required.iter().any(|q| q == r) {
                return Err(format!("reserved parameter `{r}` in schema"));
            }
        }
        match (&self.injected_param, self.scoped) {
            (Some(p), true) if RESERVED_PARAMS.contains(&p.as_str()) => {}
            (None, false) => {}
            _ => return Err("scoped tools must declare a reserved injected parameter, unscoped tools none".into()),
        }
        Ok(schema)
    }
}

impl DataPlane {
    pub fn register_upstream(
        &self,
        admin_token: &str,
        descriptor: ToolDescriptor,
        upstream: Arc<dyn Upstream>,
    ) -> Result<(), RegistrationError> {
        self.authenticate_admin(admin_token, "register_upstream")?;
        let schema = descriptor.validate().map_err(RegistrationError::MalformedDescriptor)?;
        let mut tools = self.tools.tools.write();
        if tools.contains_key(&descriptor.name) {
            return Err(RegistrationError::DuplicateTool(descriptor.name));
        }
        tools.insert(descriptor.name.clone(), Arc::new(Registered { descriptor, schema, upstream }));
        Ok(())
    }

    /// Every registered descriptor, in name order (infrastructure view).
    pub fn tool_descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.tools.read().values().map(|r| r.descriptor.clone()).collect()
    }

    pub fn tool_descriptor(&self, name: &str) -> Option<ToolDescriptor> {
        self.tools.tools.read().get(name).map(|r| r.descriptor.clone())
    }

    fn visible(r: &Resolved, tool: &str) -> bool {
        r.scope.tool_acls.iter().any(|p| tool_pattern_matches(p, tool))
    }

    /// Tools whose names match the caller's tool ACLs, in name order.
    pub fn list_tools(&self, token: &str) -> Result<Vec<ToolInfo>, crate::plane::AuthError> {
        let r = self.authenticate(&HopContext::root(), token, "list_tools")?;
        Ok(self
            .tools
            .tools
            .read()
            .values()
            .filter(|t| Self::visible(&r, &t.descriptor.name))
            .map(|t| ToolInfo { name: t.descriptor.name.clone(), params_schema: t.descriptor.params_schema.clone() })
            .collect())
    }

    fn deny_tool(
        &self,
        span: OpenSpan,
        r: &Resolved,
        call: &ToolCall,
        kind: ToolErrorKind,
        reason: &str,
        client: Option<&str>,
    ) -> Result<ToolOutcome, AuditError> {
        let body = json!({
            "op": "call_tool",
            "tool": call.tool,
            "args": call.args,
            "error_kind": kind.as_str(),
            "reason": reason,
        });
        self.emit_at(span, EventKind::ToolDenied, &r.principal.id, client, body, None)?;
        Ok(ToolOutcome { result: ToolResult::failed(kind), span: span.ctx })
    }

    /// Runs the gateway pipeline for one call. Denials never reach the
    /// upstream.
    pub fn call_tool(&self, hop: &HopContext, token: &str, call: &ToolCall) -> Result<ToolOutcome, AuditError> {
        self.count_op("call_tool");
        let r = match self.authenticate(hop, token, "call_tool") {
            Ok(r) => r,
            Err(crate::plane::AuthError::Audit(a)) => return Err(a),
            Err(crate::plane::AuthError::AuthenticationFailed) => {
                return Ok(ToolOutcome {
                    result: ToolResult::failed(ToolErrorKind::AccessDenied),
                    span: hop.parent.unwrap_or_else(|| self.new_root_context()),
                })
            }
        };
        let span = self.open_span(hop);
        let bound = hop.binding.as_deref();
        let registered = self.tools.tools.read().get(&call.tool).cloned();
        let reg = match registered {
            Some(reg) if Self::visible(&r, &call.tool) => reg,
            _ => return self.deny_tool(span, &r, call, ToolErrorKind::AccessDenied, "not_visible", bound),
        };
        let Some(args) = call.args.as_object().cloned().or_else(|| call.args.is_null().then(serde_json::Map::new)) else {
            return self.deny_tool(span, &r, call, ToolErrorKind::InvalidArgs, "args_not_object", bound);
        };
        if RESERVED_PARAMS.iter().any(|p| args.contains_key(*p)) {
            return self.deny_tool(span, &r, call, ToolErrorKind::InvalidArgs, "reserved_param", bound);
        }
        let args = Value::Object(args);
        if let Err(e) = reg.schema.validate(&args) {
            return self.deny_tool(span, &r, call, ToolErrorKind::InvalidArgs, &format!("schema: {e}"), bound);
        }
        let policy = self.policy();
        for p in policy.rates_for(&r.scope.rate_refs, reg.descriptor.action_class) {
            if self.rates.check_rate(&r.principal.id, p, self.clock.now()) == RateVerdict::Deny {
                return self.deny_tool(span, &r, call, ToolErrorKind::RateLimited, &format!("rate_policy:{}", p.id), bound);
            }
        }
        let client = if reg.descriptor.scoped {
            let chosen = match bound {
                Some(b) if r.scope.client_ids.contains(b) => Some(b.to_string()),
                Some(_) => None,
                None => r.scope.sole_client().map(str::to_string),
            };
            match chosen {
                Some(c) => Some(c),
                None => return self.deny_tool(span, &r, call, ToolErrorKind::AccessDenied, "unbound_client", bound),
            }
        } else {
            None
        };
        let record_client = client.as_deref().or(bound).or(r.scope.sole_client());
        let upstream_call = UpstreamCall {
            tool: call.tool.clone(),
            client_id: client.clone(),
            args: args.clone(),
            trace: span.ctx,
        };
        match reg.upstream.invoke(&upstream_call) {
            Ok(raw) => {
                let (redacted, n) = redact_value(policy.redactions(), &raw);
                let mut body = json!({
                    "op": "call_tool",
                    "tool": call.tool,
                    "args": args,
                    "injected_client": client,
                    "ok": true,
                    "redactions": n,
                    "result": raw,
                });
                let prehash = hash_value(&body);
                body["result"] = redacted.clone();
                self.emit_at(span, EventKind::ToolCall, &r.principal.id, record_client, body, Some(prehash))?;
                Ok(ToolOutcome {
                    result: ToolResult { ok: true, body: redacted, error_kind: None },
                    span: span.ctx,
                })
            }
            Err(e) => {
                let body = json!({
                    "op": "call_tool",
                    "tool": call.tool,
                    "args": args,
                    "injected_client": client,
                    "ok": false,
                    "error_kind": ToolErrorKind::UpstreamError.as_str(),
                    "detail": e.0,
                });
                self.emit_at(span, EventKind::ToolCall, &r.principal.id, record_client, body, None)?;
                Ok(ToolOutcome { result: ToolResult::failed(ToolErrorKind::UpstreamError), span: span.ctx })
            }
        }
    }
}
