//! The demo deployment: channel names, principals, credential scopes and
//! the default policy document.

use serde_json::json;

use crate::ai::BackendDescriptor;
use crate::identity::{AclEntry, Principal, PrincipalKind, Scope};
use crate::policy::guardrail::INJECTION_PATTERN;
use crate::policy::redact::{ACCOUNT_PATTERN, EMAIL_PATTERN};
use crate::policy::{
    ActionClass, BudgetPeriod, BudgetPolicy, GuardDirection, GuardrailAction, GuardrailKind, GuardrailRule,
    PolicyConfig, RateLimitPolicy, RedactionRule, ThresholdPolicy,
};
use crate::world::{
    GET_BUYING_POWER, GET_POSITIONS, GET_PRICE_HISTORY, GET_SIGNAL_DETAIL, POLL_ORDER, RESEARCH_QUERY, SUBMIT_ORDER,
};

pub const DEMO_SCENARIO: &str = include_str!("../../../../scenarios/demo.json");

pub const PROPOSED: &str = "orders.proposed";

pub fn signals(client: &str) -> String {
    format!("signals.{client}")
}

pub fn pending(client: &str) -> String {
    format!("orders.pending_approval.{client}")
}

pub fn execute(client: &str) -> String {
    format!("orders.execute.{client}")
}

/// Every channel the demo creates, in creation order.
pub fn channels(clients: &[String]) -> Vec<String> {
    let mut out = vec![PROPOSED.to_string()];
    for c in clients {
        out.extend([signals(c), pending(c), execute(c)]);
    }
    out
}

pub const DECISION: &str = "decision-agent";
pub const EXECUTION: &str = "execution-agent";
pub const ROUTER: &str = "order-router";
pub const APPROVER: &str = "approver";

pub fn signal_principal(client: &str) -> String {
    format!("signal-agent-{client}")
}

pub const DECISION_TOOLS: [&str; 4] = [GET_POSITIONS, GET_BUYING_POWER, GET_PRICE_HISTORY, GET_SIGNAL_DETAIL];
pub const EXECUTION_TOOLS: [&str; 2] = [SUBMIT_ORDER, POLL_ORDER];

pub const TRADE_RATE: &str = "trades-per-hour";
pub const MODEL_RATE: &str = "model-calls";
pub const DECISION_BUDGET: &str = "decision-tokens";

fn set<const N: usize>(items: [&str; N]) -> std::collections::BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn signal_scope(client: &str) -> Scope {
    Scope {
        client_ids: set([client]),
        channel_acls: vec![AclEntry::produce("signals.{client_id}")],
        tool_acls: set([RESEARCH_QUERY]),
        ..Scope::default()
    }
}

pub fn decision_scope(clients: &[String]) -> Scope {
    Scope {
        client_ids: clients.iter().cloned().collect(),
        channel_acls: vec![AclEntry::consume("signals.{client_id}"), AclEntry::produce(PROPOSED)],
        tool_acls: set(DECISION_TOOLS),
        budgets_ref: Some(DECISION_BUDGET.into()),
        rate_refs: vec![MODEL_RATE.into()],
        ..Scope::default()
    }
}

pub fn execution_scope(clients: &[String]) -> Scope {
    Scope {
        client_ids: clients.iter().cloned().collect(),
        channel_acls: vec![AclEntry::consume("orders.execute.{client_id}")],
        tool_acls: set(EXECUTION_TOOLS),
        rate_refs: vec![TRADE_RATE.into()],
        ..Scope::default()
    }
}

pub fn router_scope(clients: &[String]) -> Scope {
    Scope {
        client_ids: clients.iter().cloned().collect(),
        channel_acls: vec![
            AclEntry::consume(PROPOSED),
            AclEntry::produce("orders.execute.{client_id}"),
            AclEntry::produce("orders.pending_approval.{client_id}"),
        ],
        ..Scope::default()
    }
}

pub fn approver_scope(clients: &[String]) -> Scope {
    Scope {
        client_ids: clients.iter().cloned().collect(),
        channel_acls: vec![
            AclEntry::consume("orders.pending_approval.{client_id}"),
            AclEntry::produce("orders.execute.{client_id}"),
        ],
        transcript_grants: clients.iter().map(|c| format!("client:{c}")).collect(),
        ..Scope::default()
    }
}

pub fn principal(id: &str, kind: PrincipalKind) -> Principal {
    Principal { id: id.to_string(), kind, display_name: id.replace('-', " ") }
}

/// The demo's declared (principal, scope) table.
pub fn credentials(clients: &[String]) -> Vec<(Principal, Scope)> {
    let mut out: Vec<(Principal, Scope)> = clients
        .iter()
        .map(|c| (principal(&signal_principal(c), PrincipalKind::Agent), signal_scope(c)))
        .collect();
    out.push((principal(DECISION, PrincipalKind::Agent), decision_scope(clients)));
    out.push((principal(EXECUTION, PrincipalKind::Agent), execution_scope(clients)));
    out.push((principal(ROUTER, PrincipalKind::Service), router_scope(clients)));
    out.push((principal(APPROVER, PrincipalKind::Human), approver_scope(clients)));
    out
}

pub fn default_policy() -> PolicyConfig {
    PolicyConfig {
        rate_policies: vec![
            RateLimitPolicy { id: TRADE_RATE.into(), action_class: ActionClass::Trade, max_count: 10, window: 60 },
            RateLimitPolicy { id: MODEL_RATE.into(), action_class: ActionClass::ModelCall, max_count: 200, window: 60 },
        ],
        budget_policies: vec![BudgetPolicy {
            id: DECISION_BUDGET.into(),
            max_tokens: 2_000_000,
            period: BudgetPeriod::Total,
        }],
        guardrails: vec![
            GuardrailRule {
                id: "prompt-injection".into(),
                direction: GuardDirection::Input,
                kind: GuardrailKind::PatternDeny,
                pattern_or_schema: INJECTION_PATTERN.into(),
                action: GuardrailAction::Block,
            },
            GuardrailRule {
                id: "recommendation-shape".into(),
                direction: GuardDirection::Output,
                kind: GuardrailKind::SchemaValidate,
                pattern_or_schema: json!({
                    "type": "object",
                    "required": ["action"],
                    "properties": {"action": {"type": "string", "enum": ["buy", "sell", "hold"]}}
                })
                .to_string(),
                action: GuardrailAction::Flag,
            },
        ],
        redactions: vec![
            RedactionRule { id: "email".into(), pattern: EMAIL_PATTERN.into(), replacement: "[REDACTED-EMAIL]".into() },
            RedactionRule { id: "account".into(), pattern: ACCOUNT_PATTERN.into(), replacement: "[REDACTED-ACCOUNT]".into() },
        ],
        threshold: ThresholdPolicy::default(),
    }
}

pub fn default_backends() -> Vec<BackendDescriptor> {
    vec![
        BackendDescriptor {
            id: "scripted-economy".into(),
            cost_per_1k_tokens: 2,
            nominal_latency: 400,
            provider_key_ref: "vault:economy".into(),
        },
        BackendDescriptor {
            id: "scripted-premium".into(),
            cost_per_1k_tokens: 5,
            nominal_latency: 150,
            provider_key_ref: "vault:premium".into(),
        },
    ]
}
