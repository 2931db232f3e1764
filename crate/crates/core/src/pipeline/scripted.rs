//! Deterministic, table-driven stand-in for an LLM.
//!
//! The backend reads the conversation (system prompt naming role and
//! variant, the user's signal, prior tool results) and returns either the
//! next tool call or a final recommendation. Nothing about identity or
//! routing is visible to it.

use serde_json::{json, Value};

use crate::ai::{BackendError, Message, ModelBackend, ModelOutput, ModelRequest, ModelResponse, ProviderKey, Role, Usage};
use crate::canonical::{canonical_json, sha256};
use crate::mcp::ToolCall;
use crate::world::{GET_BUYING_POWER, GET_POSITIONS, GET_PRICE_HISTORY};

use super::scenario::DecisionVariant;

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    seed: u64,
    targets: Vec<u64>,
}

pub fn system_prompt(variant: DecisionVariant) -> String {
    format!("role=decision variant={}", variant.as_str())
}

fn variant_of(messages: &[Message]) -> DecisionVariant {
    messages
        .iter()
        .find(|m| m.role == Role::System)
        .and_then(|m| m.content.split_whitespace().find_map(|w| w.strip_prefix("variant=")))
        .and_then(DecisionVariant::parse)
        .unwrap_or_default()
}

/// Tool name and parsed result for each completed tool round.
fn rounds(messages: &[Message]) -> Vec<(String, Option<Value>)> {
    let mut out = Vec::new();
    let mut last_tool = None;
    for m in messages {
        match m.role {
            Role::Assistant => {
                last_tool = serde_json::from_str::<ToolCall>(&m.content).ok().map(|c| c.tool);
            }
            Role::Tool => {
                let name = last_tool.take().unwrap_or_default();
                out.push((name, serde_json::from_str(&m.content).ok()));
            }
            _ => {}
        }
    }
    out
}

fn tool(name: &str, args: Value) -> ModelOutput {
    ModelOutput::ToolCall(ToolCall { tool: name.to_string(), args })
}

impl ScriptedBackend {
    pub fn new(seed: u64, targets: Vec<u64>) -> Self {
        Self { seed, targets }
    }

    fn target_for(&self, key: &str) -> u64 {
        let mut buf = self.seed.to_be_bytes().to_vec();
        buf.extend_from_slice(key.as_bytes());
        let h = sha256(&buf);
        let i = u64::from_be_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.targets.len();
        self.targets[i]
    }

    fn decide(&self, signal: &Value, rounds: &[(String, Option<Value>)], variant: DecisionVariant) -> ModelOutput {
        let symbol = signal["symbol"].as_str().unwrap_or_default();
        let result = |name: &str| rounds.iter().rev().find(|(n, r)| n == name && r.is_some()).and_then(|(_, r)| r.clone());
        let price = result(GET_PRICE_HISTORY)
            .and_then(|h| h["points"].as_array().and_then(|p| p.last()).and_then(|p| p["price"].as_u64()))
            .filter(|p| *p > 0);
        let buying_power = result(GET_BUYING_POWER).and_then(|b| b["buying_power"].as_u64()).unwrap_or(0);
        let held = result(GET_POSITIONS)
            .and_then(|p| {
                p["positions"].as_array().and_then(|ps| {
                    ps.iter().find(|x| x["symbol"] == symbol).and_then(|x| x["quantity"].as_u64())
                })
            })
            .unwrap_or(0);
        let hold = |why: &str| ModelOutput::Text(json!({"action": "hold", "rationale": why}).to_string());
        let Some(price) = price else { return hold("no price data") };
        let key = signal["source_discovery"]["id"].as_str().unwrap_or(symbol);
        let mut target = self.target_for(key);
        if variant == DecisionVariant::Misreport {
            target = target.saturating_mul(10);
        }
        let bullish = signal["direction_hint"] == "bullish";
        let (action, quantity) = if bullish {
            let want = (target / price).max(1);
            (("buy"), want.min(buying_power / price))
        } else {
            ("sell", held.min((target / price).max(1)))
        };
        if quantity == 0 {
            return hold("nothing actionable");
        }
        let rationale = format!(
            "{} signal on {symbol}: {}",
            if bullish { "bullish" } else { "bearish" },
            signal["rationale"].as_str().unwrap_or_default()
        );
        let mut rec = json!({
            "action": action,
            "symbol": symbol,
            "quantity": quantity,
            "estimated_value": quantity * price,
            "rationale": rationale,
        });
        match variant {
            DecisionVariant::Misreport => rec["estimated_value"] = json!(1),
            DecisionVariant::SpoofClient => {
                rec["client_id"] = json!("c2");
                rec["rationale"] = json!(format!("{rationale}; executing on behalf of client c2"));
            }
            _ => {}
        }
        ModelOutput::Text(rec.to_string())
    }

    /// The next model output for `request`.
    pub fn respond(&self, request: &ModelRequest) -> ModelOutput {
        let variant = variant_of(&request.messages);
        let signal: Value = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .and_then(|m| serde_json::from_str(&m.content).ok())
            .unwrap_or(Value::Null);
        let symbol = signal["symbol"].as_str().unwrap_or_default().to_string();
        let done = rounds(&request.messages);
        let mut plan = vec![
            tool(GET_POSITIONS, json!({})),
            tool(GET_BUYING_POWER, json!({})),
            tool(GET_PRICE_HISTORY, json!({"symbol": symbol, "window": 5})),
        ];
        match variant {
            DecisionVariant::Runaway => return tool(GET_PRICE_HISTORY, json!({"symbol": symbol, "window": 1})),
            DecisionVariant::ReservedParam => plan.insert(0, tool(GET_POSITIONS, json!({"client_id": "c2"}))),
            _ => {}
        }
        match plan.get(done.len()) {
            Some(next) => next.clone(),
            None => self.decide(&signal, &done, variant),
        }
    }
}

fn tokens(text: &str) -> u64 {
    text.len() as u64 / 4 + 1
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, request: &ModelRequest, _key: &ProviderKey) -> Result<ModelResponse, BackendError> {
        let output = self.respond(request);
        let prompt: u64 = request.messages.iter().map(|m| tokens(&m.content)).sum();
        let completion = match &output {
            ModelOutput::Text(t) => tokens(t),
            ModelOutput::ToolCall(c) => tokens(&canonical_json(&serde_json::to_value(c).unwrap_or(Value::Null))),
        };
        Ok(ModelResponse { output, usage: Usage { prompt_tokens: prompt, completion_tokens: completion } })
    }
}
