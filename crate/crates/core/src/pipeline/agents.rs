//! Agent logic. Everything here sees only payload bytes, tool results and
//! model outputs through an [`AgentPort`].

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ai::{Message, ModelOutput, ModelRequest, Role};
use crate::world::{Discovery, Side, GET_POSITIONS, POLL_ORDER, RESEARCH_QUERY, SUBMIT_ORDER};

use super::port::AgentPort;
use super::scenario::{DecisionVariant, ExecutionVariant, SignalVariant};
use super::scripted::system_prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionHint {
    Bullish,
    Bearish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryRef {
    pub id: String,
    pub topic: String,
    pub strength: u8,
}

/// Published to `signals.{client}`. Carries no client identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    pub symbol: String,
    pub direction_hint: DirectionHint,
    pub rationale: String,
    pub source_discovery: DiscoveryRef,
}

/// Published to `orders.proposed`. Routing never trusts
/// `agent_estimated_value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedOrder {
    pub symbol: String,
    pub side: Side,
    pub quantity: u64,
    pub agent_estimated_value: u64,
    pub rationale: String,
}

/// Published to `orders.execute.{client}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutableOrder {
    pub order_ref: String,
    pub symbol: String,
    pub side: Side,
    pub quantity: u64,
}

/// One research pass; publishes the strongest qualifying discovery.
pub fn signal_agent(port: &mut AgentPort<'_>, channel: &str, topic: &str, threshold: u8, variant: SignalVariant) -> Option<Signal> {
    if variant == SignalVariant::CrossChannel {
        let client = channel.rsplit('.').next().unwrap_or_default();
        let target = format!("orders.execute.{client}");
        let _ = port.produce(&target, br#"{"order_ref":"forged","symbol":"ACME","side":"buy","quantity":1000}"#);
        let _ = port.consume(&target, 0, 10);
    }
    let found = port.call_tool(RESEARCH_QUERY, json!({"topic": topic})).ok()?;
    let discoveries: Vec<Discovery> = serde_json::from_value(found["discoveries"].clone()).ok()?;
    let best = discoveries
        .into_iter()
        .filter(|d| d.strength >= threshold && !d.relevance_symbols.is_empty())
        .max_by(|a, b| a.strength.cmp(&b.strength).then_with(|| b.id.cmp(&a.id)))?;
    let signal = Signal {
        symbol: best.relevance_symbols[0].clone(),
        direction_hint: if best.bullish { DirectionHint::Bullish } else { DirectionHint::Bearish },
        rationale: best.headline.clone(),
        source_discovery: DiscoveryRef { id: best.id, topic: best.topic, strength: best.strength },
    };
    let bytes = serde_json::to_vec(&signal).expect("signal serializes");
    port.produce(channel, &bytes).ok()?;
    Some(signal)
}

/// Runs the tool-calling loop over one signal. Returns the proposal it
/// published, if any.
pub fn decision_agent(port: &mut AgentPort<'_>, signal: &[u8], variant: DecisionVariant) -> Option<Value> {
    let text = String::from_utf8_lossy(signal).into_owned();
    let tool_schemas = port.list_tools().into_iter().map(|t| json!({"name": t.name, "parameters": t.params_schema})).collect();
    let mut request = ModelRequest {
        messages: vec![Message::new(Role::System, system_prompt(variant)), Message::new(Role::User, text)],
        tool_schemas,
        max_turn_tokens: 512,
    };
    loop {
        let response = port.complete(&request).ok()?;
        match response.output {
            ModelOutput::ToolCall(call) => {
                request.messages.push(Message::new(Role::Assistant, serde_json::to_string(&call).expect("tool call serializes")));
                let result = match port.call_tool(&call.tool, call.args) {
                    Ok(v) => v.to_string(),
                    Err(e) => e.to_string(),
                };
                request.messages.push(Message::new(Role::Tool, result));
            }
            ModelOutput::Text(t) => {
                let rec: Value = serde_json::from_str(&t).ok()?;
                let side = rec["action"].as_str()?;
                if side != "buy" && side != "sell" {
                    return None;
                }
                let mut payload = rec.as_object()?.clone();
                payload.remove("action");
                payload.insert("side".into(), json!(side));
                if let Some(v) = payload.remove("estimated_value") {
                    payload.insert("agent_estimated_value".into(), v);
                }
                let payload = Value::Object(payload);
                port.produce(super::demo::PROPOSED, payload.to_string().as_bytes()).ok()?;
                return Some(payload);
            }
        }
    }
}

/// Submits one order and polls it to a terminal state.
pub fn execution_agent(port: &mut AgentPort<'_>, order: &[u8], variant: ExecutionVariant, max_polls: u32) -> Option<Value> {
    if variant == ExecutionVariant::ToolProbe {
        let _ = port.call_tool(RESEARCH_QUERY, json!({"topic": "equities"}));
        let _ = port.call_tool(GET_POSITIONS, json!({}));
    }
    let order: ExecutableOrder = serde_json::from_slice(order).ok()?;
    let submitted = port
        .call_tool(SUBMIT_ORDER, json!({"symbol": order.symbol, "side": order.side, "quantity": order.quantity}))
        .ok()?;
    let id = submitted["order_id"].as_str()?.to_string();
    for _ in 0..max_polls {
        let status = port.call_tool(POLL_ORDER, json!({"order_id": id})).ok()?;
        if status["status"] != "pending" {
            return Some(status);
        }
    }
    None
}
