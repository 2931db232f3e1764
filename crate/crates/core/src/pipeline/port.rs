//! The runtime harness an agent runs inside.
//!
//! Agent logic talks to gateways and the broker only through an
//! [`AgentPort`]. The port holds the agent's credential, the step's client
//! binding and the current trace position; none of them is readable by the
//! agent. It also enforces the per-step turn cap and, for execution steps,
//! writes the order lifecycle records.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::ai::{ModelError, ModelRequest, ModelResponse};
use crate::broker::BrokerError;
use crate::ledger::{EventKind, TraceContext};
use crate::mcp::{ToolCall, ToolError, ToolInfo};
use crate::plane::{AuditError, DataPlane, HopContext};
use crate::world::{POLL_ORDER, SUBMIT_ORDER};

pub struct AgentPort<'a> {
    plane: &'a DataPlane,
    token: &'a str,
    actor: String,
    binding: Option<String>,
    cursor: Option<TraceContext>,
    turns: u32,
    max_turns: u32,
    order_ref: Option<String>,
    lifecycle: BTreeSet<(String, &'static str)>,
    fault: Option<AuditError>,
    terminated: bool,
}

impl<'a> AgentPort<'a> {
    pub fn new(plane: &'a DataPlane, token: &'a str, max_turns: u32) -> Self {
        let actor = plane.resolve(token).map(|r| r.principal.id).unwrap_or_else(|| "unauthenticated".into());
        Self {
            plane,
            token,
            actor,
            binding: None,
            cursor: None,
            turns: 0,
            max_turns,
            order_ref: None,
            lifecycle: BTreeSet::new(),
            fault: None,
            terminated: false,
        }
    }

    /// Binds the step to `client` (from the consumed channel).
    pub(crate) fn bind(mut self, client: &str) -> Self {
        self.binding = Some(client.to_string());
        self
    }

    /// Starts the step under `parent`, or under a fresh root.
    pub(crate) fn under(mut self, parent: Option<TraceContext>) -> Self {
        self.cursor = Some(parent.unwrap_or_else(|| self.plane.new_root_context()));
        self
    }

    /// Execution steps: order lifecycle records are tagged with `order_ref`.
    pub(crate) fn set_order_ref(&mut self, order_ref: &str) {
        self.order_ref = Some(order_ref.to_string());
    }

    fn hop(&self) -> HopContext {
        HopContext { parent: self.cursor, binding: self.binding.clone() }
    }

    pub fn turns(&self) -> u32 {
        self.turns
    }

    pub fn trace(&self) -> Option<TraceContext> {
        self.cursor
    }

    pub fn fault(&self) -> Option<&AuditError> {
        self.fault.as_ref()
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn list_tools(&self) -> Vec<ToolInfo> {
        self.plane.list_tools(self.token).unwrap_or_default()
    }

    pub fn call_tool(&mut self, tool: &str, args: Value) -> Result<Value, ToolError> {
        let call = ToolCall { tool: tool.to_string(), args };
        match self.plane.call_tool(&self.hop(), self.token, &call) {
            Ok(out) => {
                self.cursor = Some(out.span);
                if out.result.ok {
                    self.observe(tool, &out.result.body, out.span);
                }
                out.result.into_agent()
            }
            Err(e) => {
                self.fault = Some(e);
                Err(ToolError)
            }
        }
    }

    pub fn complete(&mut self, request: &ModelRequest) -> Result<ModelResponse, ModelError> {
        if self.turns >= self.max_turns {
            if !self.terminated {
                self.terminated = true;
                self.plane.count_op("complete");
                let body = json!({
                    "op": "complete",
                    "error_kind": "turn_cap_exceeded",
                    "turns": self.turns,
                    "max_turns": self.max_turns,
                });
                match self.plane.emit(&self.hop(), EventKind::ModelDenied, &self.actor, self.binding.as_deref(), body) {
                    Ok(span) => self.cursor = Some(span),
                    Err(e) => self.fault = Some(e),
                }
            }
            return Err(ModelError);
        }
        self.turns += 1;
        match self.plane.complete(&self.hop(), self.token, request) {
            Ok(out) => {
                self.cursor = Some(out.span);
                out.into_agent()
            }
            Err(e) => {
                self.fault = Some(e);
                Err(ModelError)
            }
        }
    }

    pub fn produce(&mut self, channel: &str, payload: &[u8]) -> Result<(), BrokerError> {
        let out = self.plane.produce(&self.hop(), self.token, channel, payload);
        match &out {
            Ok(p) => self.cursor = Some(p.span),
            Err(BrokerError::Audit(a)) => self.fault = Some(a.clone()),
            Err(_) => {}
        }
        out.map(|_| ())
    }

    pub fn consume(&mut self, channel: &str, offset: u64, max: u64) -> Result<Vec<Vec<u8>>, BrokerError> {
        let out = self.plane.consume(&self.hop(), self.token, channel, offset, max);
        match &out {
            Ok(c) => self.cursor = Some(c.span),
            Err(BrokerError::Audit(a)) => self.fault = Some(a.clone()),
            Err(_) => {}
        }
        out.map(|c| c.payloads)
    }

    fn lifecycle(&mut self, kind: EventKind, broker_order_id: &str, body: Value, span: TraceContext) {
        let tag = if kind == EventKind::OrderSubmitted { "submitted" } else { "terminal" };
        if !self.lifecycle.insert((broker_order_id.to_string(), tag)) {
            return;
        }
        self.plane.count_op(kind.as_str());
        let hop = HopContext::under(span);
        match self.plane.emit(&hop, kind, &self.actor, self.binding.as_deref(), body) {
            Ok(s) => self.cursor = Some(s),
            Err(e) => self.fault = Some(e),
        }
    }

    fn observe(&mut self, tool: &str, result: &Value, span: TraceContext) {
        let Some(order_ref) = self.order_ref.clone() else { return };
        match tool {
            SUBMIT_ORDER => {
                let id = result["order_id"].as_str().unwrap_or_default().to_string();
                let body = json!({"op": "order_submitted", "order_ref": order_ref, "broker_order_id": id});
                self.lifecycle(EventKind::OrderSubmitted, &id, body, span);
            }
            POLL_ORDER => {
                let status = result["status"].as_str().unwrap_or_default();
                if status == "filled" || status == "rejected" {
                    let id = result["order_id"].as_str().unwrap_or_default().to_string();
                    let body = json!({
                        "op": "order_filled",
                        "order_ref": order_ref,
                        "broker_order_id": id,
                        "status": status,
                        "fill_price": result["fill_price"],
                        "symbol": result["symbol"],
                        "side": result["side"],
                        "quantity": result["quantity"],
                    });
                    self.lifecycle(EventKind::OrderFilled, &id, body, span);
                }
            }
            _ => {}
        }
    }
}
