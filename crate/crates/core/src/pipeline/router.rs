//! Infrastructure order routing: client from envelope metadata, value
//! recomputed from the trusted reference price, strict threshold compare.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::broker::{BrokerError, Envelope};
use crate::ledger::{EventKind, TraceContext};
use crate::plane::{AuditError, DataPlane, HopContext};
use crate::world::{Side, World};

use super::agents::{ExecutableOrder, ProposedOrder};
use super::demo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteVerdict {
    AutoExecute,
    PendingApproval,
}

/// Auto-execute iff the recomputed value is strictly below the threshold.
pub fn route_verdict(recomputed_value: u64, threshold: u64) -> RouteVerdict {
    if recomputed_value < threshold {
        RouteVerdict::AutoExecute
    } else {
        RouteVerdict::PendingApproval
    }
}

pub fn destination(verdict: RouteVerdict, client: &str) -> String {
    match verdict {
        RouteVerdict::AutoExecute => demo::execute(client),
        RouteVerdict::PendingApproval => demo::pending(client),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutedOrder {
    pub order_ref: String,
    pub client_id: String,
    pub symbol: String,
    pub side: Side,
    pub quantity: u64,
    pub agent_estimated_value: u64,
    pub recomputed_value: u64,
    pub reference_price: u64,
    pub threshold: u64,
    pub verdict: RouteVerdict,
    pub destination: String,
}

/// Payload placed on a pending-approval channel for the human reviewer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPayload {
    pub order_ref: String,
    pub symbol: String,
    pub side: Side,
    pub quantity: u64,
    pub agent_estimated_value: u64,
    pub recomputed_value: u64,
    pub threshold: u64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteOutcome {
    Routed(RoutedOrder),
    Discarded { order_ref: String, reason: String },
}

pub fn order_ref_for(offset: u64) -> String {
    format!("po-{offset:06}")
}

/// Pure routing decision over one proposed-order envelope.
pub fn decide(envelope: &Envelope, world: &World, threshold: u64) -> RouteOutcome {
    let order_ref = order_ref_for(envelope.meta.offset);
    let discard = |reason: &str| RouteOutcome::Discarded { order_ref: order_ref.clone(), reason: reason.to_string() };
    let Ok(order) = serde_json::from_slice::<ProposedOrder>(&envelope.payload) else {
        return discard("malformed_payload");
    };
    if order.quantity == 0 {
        return discard("invalid_quantity");
    }
    let Some(client) = envelope.meta.client_binding.clone() else {
        return discard("unbound_client");
    };
    let Ok(price) = world.reference_price(&order.symbol) else {
        return discard("unknown_symbol");
    };
    let Some(value) = order.quantity.checked_mul(price) else {
        return discard("value_overflow");
    };
    let verdict = route_verdict(value, threshold);
    RouteOutcome::Routed(RoutedOrder {
        destination: destination(verdict, &client),
        order_ref,
        client_id: client,
        symbol: order.symbol,
        side: order.side,
        quantity: order.quantity,
        agent_estimated_value: order.agent_estimated_value,
        recomputed_value: value,
        reference_price: price,
        threshold,
        verdict,
    })
}

#[derive(Debug)]
pub struct RouteResult {
    pub outcome: RouteOutcome,
    pub span: TraceContext,
}

/// Consumes the proposed order at `offset` with the router credential,
/// records the decision and forwards the order.
pub fn route_one(plane: &DataPlane, world: &World, token: &str, offset: u64) -> Result<Option<RouteResult>, AuditError> {
    let consumed = match plane.consume(&HopContext::root(), token, demo::PROPOSED, offset, 1) {
        Ok(c) if !c.payloads.is_empty() => c,
        Ok(_) => return Ok(None),
        Err(BrokerError::Audit(a)) => return Err(a),
        Err(_) => return Ok(None),
    };
    let Ok(envelope) = plane.envelope(demo::PROPOSED, offset) else { return Ok(None) };
    let actor = plane.resolve(token).map(|r| r.principal.id).unwrap_or_default();
    let threshold = plane.policy().threshold().autonomy_threshold;
    let outcome = decide(&envelope, world, threshold);
    plane.count_op("route");
    let hop = HopContext::under(consumed.span);
    let (body, client) = match &outcome {
        RouteOutcome::Routed(r) => {
            let mut b = serde_json::to_value(r).expect("routed order serializes");
            b["op"] = json!("route");
            b["outcome"] = json!("routed");
            b["producer"] = json!(envelope.meta.producer_principal);
            (b, Some(r.client_id.clone()))
        }
        RouteOutcome::Discarded { order_ref, reason } => (
            json!({
                "op": "route",
                "outcome": "discarded",
                "order_ref": order_ref,
                "reason": reason,
                "producer": envelope.meta.producer_principal,
            }),
            envelope.meta.client_binding.clone(),
        ),
    };
    let span = plane.emit(&hop, EventKind::RouteDecision, &actor, client.as_deref(), body)?;
    if let RouteOutcome::Routed(r) = &outcome {
        let payload: Value = match r.verdict {
            RouteVerdict::AutoExecute => serde_json::to_value(ExecutableOrder {
                order_ref: r.order_ref.clone(),
                symbol: r.symbol.clone(),
                side: r.side,
                quantity: r.quantity,
            }),
            RouteVerdict::PendingApproval => {
                let rationale = serde_json::from_slice::<ProposedOrder>(&envelope.payload).map(|p| p.rationale).unwrap_or_default();
                serde_json::to_value(PendingPayload {
                    order_ref: r.order_ref.clone(),
                    symbol: r.symbol.clone(),
                    side: r.side,
                    quantity: r.quantity,
                    agent_estimated_value: r.agent_estimated_value,
                    recomputed_value: r.recomputed_value,
                    threshold: r.threshold,
                    rationale,
                })
            }
        }
        .expect("payload serializes");
        let hop = HopContext::under(span).bound(r.client_id.clone());
        if let Err(BrokerError::Audit(a)) = plane.produce(&hop, token, &r.destination, payload.to_string().as_bytes()) {
            return Err(a);
        }
    }
    Ok(Some(RouteResult { outcome, span }))
}
