//! Adversarial tool-argument fuzzing against a two-client deployment.
//!
//! Adversarial Decision and Execution agents call every tool with forged
//! client ids, other clients' order ids, reserved parameters and junk. The
//! fuzzer checks two things: no agent-visible result carries another
//! client's data, and every scoped upstream invocation received exactly
//! the client the harness bound the step to.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::ledger::{EventKind, RecordDraft, TraceContext};
use crate::mcp::ToolCall;
use crate::plane::HopContext;
use crate::world::{GET_BUYING_POWER, GET_POSITIONS, GET_PRICE_HISTORY, POLL_ORDER, RESEARCH_QUERY, SUBMIT_ORDER};

use super::{demo, Pipeline, Scenario};

#[derive(Debug, Clone, Default, Serialize)]
pub struct FuzzReport {
    pub calls: u64,
    pub succeeded: u64,
    pub refused: u64,
    pub scoped_invocations: u64,
    /// Agent-visible results that carried another client's data.
    pub foreign_payloads: Vec<String>,
    /// Scoped upstream invocations whose injected client differed from the
    /// step binding.
    pub out_of_scope_injections: Vec<String>,
    pub append_attempts: u64,
    pub append_accepted: u64,
}

const JUNK_TOOLS: &[&str] = &["admin-dump", "get-positions-all", "", "*"];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Arguments shaped for `tool` about half the time, so the call gets past
/// schema validation and reaches the upstream; the rest is hostile noise.
fn fuzz_args(rng: &mut ChaCha8Rng, tool: &str, clients: &[String], orders: &[String], symbols: &[String]) -> Value {
    let other = pick(rng, clients).clone();
    let order = if orders.is_empty() { "ord-000001".to_string() } else { pick(rng, orders).clone() };
    let symbol = pick(rng, symbols).clone();
    if rng.random_bool(0.5) {
        return match tool {
            GET_PRICE_HISTORY => json!({"symbol": symbol, "window": rng.random_range(1..30)}),
            SUBMIT_ORDER => json!({"symbol": symbol, "side": pick(rng, &["buy", "sell"]), "quantity": rng.random_range(1..5)}),
            POLL_ORDER => json!({"order_id": order}),
            RESEARCH_QUERY => json!({"topic": pick(rng, &["equities", "macro", other.as_str()])}),
            _ => json!({}),
        };
    }
    match rng.random_range(0..14) {
        0 => json!({}),
        1 => json!({"client_id": other}),
        2 => json!({"symbol": symbol, "window": rng.random_range(0..2000)}),
        3 => json!({"symbol": other, "window": 5}),
        4 => json!({"order_id": order}),
        5 => json!({"order_id": order, "client_id": other}),
        6 => json!({"topic": other}),
        7 => json!({"discovery_id": format!("disc-{other}-1-0")}),
        8 => json!({"symbol": symbol, "side": pick(rng, &["buy", "sell", "short"]), "quantity": rng.random_range(0..50)}),
        9 => json!({"symbol": symbol, "side": "buy", "quantity": u64::MAX}),
        10 => json!({"args": {"client_id": other}, "on_behalf_of": other}),
        11 => json!(other),
        12 => json!([other, order]),
        _ => Value::Null,
    }
}

/// Walks a result document for client-tagged objects belonging to anyone
/// but `client`.
fn foreign_clients(v: &Value, client: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(c)) = map.get("client_id") {
                if c != client {
                    out.push(c.clone());
                }
            }
            map.values().for_each(|x| foreign_clients(x, client, out));
        }
        Value::Array(items) => items.iter().for_each(|x| foreign_clients(x, client, out)),
        _ => {}
    }
}

/// Runs `calls` adversarial tool calls after `warmup` ticks of the
/// two-client demo.
pub fn fuzz_isolation(seed: u64, calls: u64, warmup: u64) -> FuzzReport {
    let pipeline = Pipeline::new(Scenario::demo(seed)).expect("demo scenario is valid");
    pipeline.run(warmup);
    let plane = pipeline.plane();
    let world = pipeline.world();
    let clients = pipeline.clients().to_vec();
    let symbols: Vec<String> = pipeline.scenario().symbols.iter().map(|s| s.symbol.clone()).collect();
    let mut orders: Vec<String> = plane
        .ledger()
        .snapshot()
        .iter()
        .filter(|r| r.record.event_kind == EventKind::OrderSubmitted)
        .filter_map(|r| r.record.body["broker_order_id"].as_str().map(str::to_string))
        .collect();
    let tools: Vec<String> = plane
        .tool_descriptors()
        .into_iter()
        .map(|d| d.name)
        .chain(JUNK_TOOLS.iter().map(|s| s.to_string()))
        .collect();
    let agents = [demo::DECISION, demo::EXECUTION];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f022);
    let mut report = FuzzReport::default();
    let mut bound: HashMap<TraceContext, String> = HashMap::new();
    let hits_before = pipeline.upstream_hits().len();

    for _ in 0..calls {
        let agent = *pick(&mut rng, &agents);
        let token = pipeline.token(agent).expect("demo credential").to_string();
        let binding = pick(&mut rng, &clients).clone();
        let own: &[&str] = if agent == demo::DECISION { &demo::DECISION_TOOLS } else { &demo::EXECUTION_TOOLS };
        let tool = if rng.random_bool(0.7) { pick(&mut rng, own).to_string() } else { pick(&mut rng, &tools).clone() };
        let args = fuzz_args(&mut rng, &tool, &clients, &orders, &symbols);
        let call = ToolCall { tool: tool.clone(), args };
        let hop = HopContext::root().bound(binding.clone());
        let Ok(out) = plane.call_tool(&hop, &token, &call) else { continue };
        report.calls += 1;
        bound.insert(out.span, binding.clone());
        let Ok(body) = out.result.into_agent() else {
            report.refused += 1;
            continue;
        };
        report.succeeded += 1;
        let mut foreign = Vec::new();
        foreign_clients(&body, &binding, &mut foreign);
        match tool.as_str() {
            GET_BUYING_POWER if body["buying_power"].as_u64() != world.get_buying_power(&binding).ok() => {
                foreign.push("buying_power".into())
            }
            GET_POSITIONS if body["positions"] != serde_json::to_value(world.get_positions(&binding).unwrap_or_default()).unwrap_or_default() => {
                foreign.push("positions".into())
            }
            SUBMIT_ORDER => {
                if let Some(id) = body["order_id"].as_str() {
                    orders.push(id.to_string());
                }
            }
            POLL_ORDER if body["client_id"] != binding.as_str() => foreign.push("order".into()),
            _ => {}
        }
        if !foreign.is_empty() {
            report.foreign_payloads.push(format!("{agent} bound to {binding} via {tool}: {foreign:?}"));
        }
    }

    let descriptors: BTreeMap<String, bool> = plane.tool_descriptors().into_iter().map(|d| (d.name, d.scoped)).collect();
    for hit in pipeline.upstream_hits().into_iter().skip(hits_before) {
        let Some(binding) = bound.get(&hit.trace) else {
            report.out_of_scope_injections.push(format!("{} invoked outside any fuzzed call", hit.tool));
            continue;
        };
        if descriptors.get(&hit.tool).copied().unwrap_or(true) {
            report.scoped_invocations += 1;
            if hit.client_id.as_deref() != Some(binding.as_str()) {
                report.out_of_scope_injections.push(format!("{} got {:?}, bound {binding}", hit.tool, hit.client_id));
            }
        } else if hit.client_id.is_some() {
            report.out_of_scope_injections.push(format!("unscoped {} got {:?}", hit.tool, hit.client_id));
        }
    }

    for agent in agents {
        let token = pipeline.token(agent).expect("demo credential");
        report.append_attempts += 1;
        let draft = RecordDraft {
            logical_time: plane.now(),
            trace: plane.new_root_context(),
            parent_span: None,
            actor: agent.to_string(),
            event_kind: EventKind::OrderFilled,
            client: None,
            body: json!({"op": "order_filled", "forged": true}),
            body_prehash: None,
        };
        if plane.ledger().append(token, draft).is_ok() {
            report.append_accepted += 1;
        }
    }
    report
}
