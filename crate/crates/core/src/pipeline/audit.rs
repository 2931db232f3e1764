//! Ledger audits: denial classification, approval necessity, trace-tree
//! connectivity, per-order trace composition and operation completeness.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value;

use crate::ledger::{EventKind, SealedRecord, SpanId, TraceId, TranscriptRecord};
use crate::plane::DataPlane;

use super::demo;

/// Whether a record documents a refused action.
pub fn is_denial(r: &TranscriptRecord) -> bool {
    match r.event_kind {
        EventKind::ToolDenied | EventKind::ModelDenied | EventKind::GuardrailVerdict => true,
        EventKind::Produce | EventKind::Consume => r.body["outcome"] == "denied",
        EventKind::CredentialEvent => {
            matches!(r.body["event"].as_str(), Some("auth_failed" | "unauthorized" | "issue_failed" | "revoke_failed"))
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub seq: u64,
    pub detail: String,
}

fn order_ref_of_payload(r: &TranscriptRecord) -> Option<String> {
    let text = r.body["payload"].as_str()?;
    let v: Value = serde_json::from_str(text).ok()?;
    v["order_ref"].as_str().map(str::to_string)
}

/// Every successful produce to an execution channel must follow a routing
/// decision for that order; at or above the threshold it must also follow
/// an approved decision.
pub fn approval_necessity(records: &[SealedRecord]) -> Vec<Violation> {
    let mut routed: BTreeMap<String, bool> = BTreeMap::new();
    let mut approved: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    for s in records {
        let r = &s.record;
        match r.event_kind {
            EventKind::RouteDecision if r.body["outcome"] == "routed" => {
                let (Some(order), Some(value), Some(threshold)) =
                    (r.body["order_ref"].as_str(), r.body["recomputed_value"].as_u64(), r.body["threshold"].as_u64())
                else {
                    continue;
                };
                routed.insert(order.to_string(), value >= threshold);
            }
            EventKind::ApprovalDecision if r.body["decision"] == "approved" => {
                if let Some(order) = r.body["order_ref"].as_str() {
                    approved.insert(order.to_string());
                }
            }
            EventKind::Produce
                if r.body["outcome"] == "ok"
                    && r.body["channel"].as_str().is_some_and(|c| c.starts_with("orders.execute.")) =>
            {
                let Some(order) = order_ref_of_payload(r) else {
                    out.push(Violation { seq: r.seq, detail: "execution payload without order_ref".into() });
                    continue;
                };
                match routed.get(&order) {
                    None => out.push(Violation { seq: r.seq, detail: format!("{order} reached execution unrouted") }),
                    Some(true) if !approved.contains(&order) => {
                        out.push(Violation { seq: r.seq, detail: format!("{order} reached execution without approval") })
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    out
}

/// Records grouped by trace id, in ledger order.
pub fn traces(records: &[SealedRecord]) -> BTreeMap<TraceId, Vec<&SealedRecord>> {
    let mut map: BTreeMap<TraceId, Vec<&SealedRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.record.trace.trace_id).or_default().push(r);
    }
    map
}

/// Each trace must form one tree: all records hang off a single root span
/// (a recorded root or one unrecorded harness root).
pub fn trace_connectivity(records: &[SealedRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (trace, rs) in traces(records) {
        let spans: BTreeSet<SpanId> = rs.iter().map(|r| r.record.trace.span_id).collect();
        let mut roots: BTreeSet<Option<SpanId>> = BTreeSet::new();
        for r in &rs {
            match r.record.parent_span {
                None => {
                    roots.insert(Some(r.record.trace.span_id));
                }
                Some(p) if !spans.contains(&p) => {
                    roots.insert(Some(p));
                }
                Some(_) => {}
            }
        }
        if roots.len() > 1 {
            out.push(Violation { seq: rs[0].record.seq, detail: format!("trace {trace} has {} roots", roots.len()) });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TraceCounts {
    pub research_tool_calls: u64,
    pub model_calls: u64,
    pub decision_tool_calls: u64,
    pub produces: u64,
    pub consumes: u64,
    pub route_decisions: u64,
    pub approval_decisions: u64,
    pub orders_submitted: u64,
    pub orders_filled: u64,
}

pub fn trace_counts(records: &[&SealedRecord]) -> TraceCounts {
    let mut c = TraceCounts::default();
    for s in records {
        let r = &s.record;
        match r.event_kind {
            EventKind::ToolCall => {
                if r.body["tool"] == crate::world::RESEARCH_QUERY {
                    c.research_tool_calls += 1;
                }
                if r.actor == demo::DECISION {
                    c.decision_tool_calls += 1;
                }
            }
            EventKind::ModelCall => c.model_calls += 1,
            EventKind::Produce if r.body["outcome"] == "ok" => c.produces += 1,
            EventKind::Consume if r.body["outcome"] == "ok" => c.consumes += 1,
            EventKind::RouteDecision => c.route_decisions += 1,
            EventKind::ApprovalDecision => c.approval_decisions += 1,
            EventKind::OrderSubmitted => c.orders_submitted += 1,
            EventKind::OrderFilled => c.orders_filled += 1,
            _ => {}
        }
    }
    c
}

/// Operations counted by the plane whose every invocation yields exactly
/// one record carrying `"op"`.
pub const AUDITED_OPS: &[&str] = &[
    "produce",
    "consume",
    "call_tool",
    "complete",
    "issue_credential",
    "revoke",
    "route",
    "order_submitted",
    "order_filled",
];

/// Compares the plane's operation counters with the records per op.
pub fn completeness(plane: &DataPlane) -> Vec<String> {
    let counts = plane.op_counts();
    let mut recorded: BTreeMap<String, u64> = BTreeMap::new();
    for s in plane.ledger().snapshot() {
        if let Some(op) = s.record.body["op"].as_str() {
            *recorded.entry(op.to_string()).or_insert(0) += 1;
        }
    }
    AUDITED_OPS
        .iter()
        .filter_map(|op| {
            let c = counts.get(op).copied().unwrap_or(0);
            let r = recorded.get(*op).copied().unwrap_or(0);
            (c != r).then(|| format!("{op}: {c} operations, {r} records"))
        })
        .collect()
}
