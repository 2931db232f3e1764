//! The approval service behind the approval API: a pending set fed from
//! the pending-approval channels, single-decision enforcement, and change
//! notifications for live views.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::broker::BrokerError;
use crate::ledger::EventKind;
use crate::plane::{AuditError, AuthError, DataPlane, HopContext};
use crate::policy::acl::{check_channel_access, Direction};
use crate::world::Side;

use super::agents::ExecutableOrder;
use super::demo;
use super::router::PendingPayload;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingOrder {
    pub order_ref: String,
    pub client_id: String,
    pub symbol: String,
    pub side: Side,
    pub quantity: u64,
    pub agent_estimated_value: u64,
    pub recomputed_value: u64,
    pub threshold: u64,
    pub rationale: String,
    pub trace_id: String,
    /// Logical time the order entered the pending set.
    pub received_at: u64,
    #[serde(skip)]
    offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approved,
    Denied,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approved => "approved",
            Decision::Denied => "denied",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalDecision {
    pub order_ref: String,
    pub client_id: String,
    pub approver_principal: String,
    pub decision: Decision,
    pub note: String,
    pub logical_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ApprovalEvent {
    Added { order: PendingOrder },
    Decided { decision: ApprovalDecision },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApprovalError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("unauthorized")]
    Unauthorized,
    #[error("order already decided")]
    AlreadyDecided,
    #[error("unknown order")]
    UnknownOrder,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

impl From<AuthError> for ApprovalError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AuthenticationFailed => ApprovalError::AuthenticationFailed,
            AuthError::Audit(a) => ApprovalError::Audit(a),
        }
    }
}

pub type Listener = Arc<dyn Fn(&ApprovalEvent) + Send + Sync>;

#[derive(Default)]
struct State {
    pending: BTreeMap<String, PendingOrder>,
    decided: BTreeMap<String, ApprovalDecision>,
    scanned: BTreeMap<String, u64>,
}

#[derive(Default)]
pub struct ApprovalService {
    state: Mutex<State>,
    listeners: RwLock<Vec<Listener>>,
}

impl std::fmt::Debug for ApprovalService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let st = self.state.lock();
        f.debug_struct("ApprovalService")
            .field("pending", &st.pending.len())
            .field("decided", &st.decided.len())
            .finish()
    }
}

impl ApprovalService {
    pub fn add_listener(&self, listener: Listener) {
        self.listeners.write().push(listener);
    }

    fn notify(&self, events: &[ApprovalEvent]) {
        let listeners = self.listeners.read().clone();
        for e in events {
            for l in &listeners {
                l(e);
            }
        }
    }

    pub fn pending(&self) -> Vec<PendingOrder> {
        self.state.lock().pending.values().cloned().collect()
    }

    pub fn decisions(&self) -> Vec<ApprovalDecision> {
        self.state.lock().decided.values().cloned().collect()
    }

    /// Picks up new envelopes on every pending-approval channel.
    pub fn scan(&self, plane: &DataPlane, clients: &[String]) -> usize {
        let mut added = Vec::new();
        {
            let mut st = self.state.lock();
            for c in clients {
                let channel = demo::pending(c);
                let end = plane.end_offset(&channel).unwrap_or(0);
                let from = *st.scanned.get(&channel).unwrap_or(&0);
                for offset in from..end {
                    let Ok(env) = plane.envelope(&channel, offset) else { continue };
                    let Ok(p) = serde_json::from_slice::<PendingPayload>(&env.payload) else { continue };
                    if st.pending.contains_key(&p.order_ref) || st.decided.contains_key(&p.order_ref) {
                        continue;
                    }
                    let order = PendingOrder {
                        order_ref: p.order_ref.clone(),
                        client_id: c.clone(),
                        symbol: p.symbol,
                        side: p.side,
                        quantity: p.quantity,
                        agent_estimated_value: p.agent_estimated_value,
                        recomputed_value: p.recomputed_value,
                        threshold: p.threshold,
                        rationale: p.rationale,
                        trace_id: env.meta.trace.trace_id.to_hex(),
                        received_at: plane.now(),
                        offset,
                    };
                    st.pending.insert(p.order_ref, order.clone());
                    added.push(ApprovalEvent::Added { order });
                }
                st.scanned.insert(channel, end);
            }
        }
        let n = added.len();
        self.notify(&added);
        n
    }

    /// Records exactly one decision for `order_ref`; approval forwards the
    /// order to the client's execution channel under the approver's
    /// credential.
    pub fn decide(
        &self,
        plane: &DataPlane,
        token: &str,
        order_ref: &str,
        decision: Decision,
        note: &str,
    ) -> Result<ApprovalDecision, ApprovalError> {
        let r = plane.authenticate(&HopContext::root(), token, "approval_decide")?;
        let mut st = self.state.lock();
        if st.decided.contains_key(order_ref) {
            return Err(ApprovalError::AlreadyDecided);
        }
        let Some(order) = st.pending.get(order_ref).cloned() else {
            return Err(ApprovalError::UnknownOrder);
        };
        let pending_channel = demo::pending(&order.client_id);
        let execute_channel = demo::execute(&order.client_id);
        let allowed = check_channel_access(&r.scope, &pending_channel, Direction::Consume).is_allowed()
            && check_channel_access(&r.scope, &execute_channel, Direction::Produce).is_allowed();
        if !allowed {
            plane.emit(
                &HopContext::root(),
                EventKind::CredentialEvent,
                &r.principal.id,
                Some(&order.client_id),
                json!({"op": "approval_decide", "event": "unauthorized", "order_ref": order_ref}),
            )?;
            return Err(ApprovalError::Unauthorized);
        }
        let consumed = match plane.consume(&HopContext::root(), token, &pending_channel, order.offset, 1) {
            Ok(c) => c,
            Err(BrokerError::Audit(a)) => return Err(a.into()),
            Err(_) => return Err(ApprovalError::Unauthorized),
        };
        let record = ApprovalDecision {
            order_ref: order_ref.to_string(),
            client_id: order.client_id.clone(),
            approver_principal: r.principal.id.clone(),
            decision,
            note: note.to_string(),
            logical_time: plane.now(),
        };
        let mut body = serde_json::to_value(&record).expect("decision serializes");
        body["op"] = json!("approval_decide");
        body["recomputed_value"] = json!(order.recomputed_value);
        body["threshold"] = json!(order.threshold);
        let span = plane.emit(
            &HopContext::under(consumed.span),
            EventKind::ApprovalDecision,
            &r.principal.id,
            Some(&order.client_id),
            body,
        )?;
        st.pending.remove(order_ref);
        st.decided.insert(order_ref.to_string(), record.clone());
        if decision == Decision::Approved {
            let payload = ExecutableOrder {
                order_ref: order.order_ref.clone(),
                symbol: order.symbol.clone(),
                side: order.side,
                quantity: order.quantity,
            };
            let bytes = serde_json::to_vec(&payload).expect("order serializes");
            let hop = HopContext::under(span).bound(order.client_id.clone());
            if let Err(BrokerError::Audit(a)) = plane.produce(&hop, token, &execute_channel, &bytes) {
                return Err(a.into());
            }
        }
        drop(st);
        self.notify(&[ApprovalEvent::Decided { decision: record.clone() }]);
        Ok(record)
    }
}
