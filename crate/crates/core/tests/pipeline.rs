use std::collections::BTreeMap;

use adp_core::ledger::journal::verify_journal;
use adp_core::ledger::{ChainVerdict, EventKind, SealedRecord};
use adp_core::par::Execution;
use adp_core::pipeline::adversary::fuzz_isolation;
use adp_core::pipeline::scenario::{DecisionVariant, ExecutionVariant, SignalVariant};
use adp_core::pipeline::sweep::sweep;
use adp_core::pipeline::{audit, demo, ApprovalMode, Pipeline, Scenario};

fn run(s: Scenario, ticks: u64) -> (Pipeline, Vec<SealedRecord>) {
    let p = Pipeline::new(s).unwrap();
    p.run(ticks);
    let records = p.plane().ledger().snapshot();
    (p, records)
}

fn of_kind(records: &[SealedRecord], kind: EventKind) -> Vec<&SealedRecord> {
    records.iter().filter(|r| r.record.event_kind == kind).collect()
}

fn assert_clean(p: &Pipeline, records: &[SealedRecord]) {
    assert!(audit::approval_necessity(records).is_empty());
    assert!(audit::trace_connectivity(records).is_empty());
    assert_eq!(audit::completeness(p.plane()), Vec::<String>::new());
    assert!(p.plane().ledger().verify_all().is_ok());
}

/// Client each trace was started for, from the signal it carries.
fn trace_clients(records: &[SealedRecord]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for r in of_kind(records, EventKind::Produce) {
        if let Some(c) = r.record.body["channel"].as_str().and_then(|c| c.strip_prefix("signals.")) {
            if r.record.body["outcome"] == "ok" {
                out.insert(r.record.trace.trace_id.to_hex(), c.to_string());
            }
        }
    }
    out
}

#[test]
fn benign_demo_takes_both_routes_and_summary_matches_ledger() {
    let (p, records) = run(Scenario::demo(42), 20);
    let s = p.summary();
    assert!(s.auto_routed >= 1 && s.pending_routed >= 1, "{s:?}");
    assert!(s.filled >= 1);
    assert_clean(&p, &records);

    let routes = of_kind(&records, EventKind::RouteDecision);
    let verdict = |v: &str| routes.iter().filter(|r| r.record.body["verdict"] == v).count() as u64;
    assert_eq!(verdict("auto_execute"), s.auto_routed);
    assert_eq!(verdict("pending_approval"), s.pending_routed);
    assert_eq!(of_kind(&records, EventKind::ApprovalDecision).len() as u64, s.approved + s.denied);
    assert_eq!(of_kind(&records, EventKind::OrderSubmitted).len() as u64, s.submitted);
    assert_eq!(s.submitted, s.filled + s.rejected);
    assert_eq!(s.transcript_len, records.len() as u64);
    assert_eq!(s.head_hash, hex::encode(records.last().unwrap().this_hash));
    // approve_all: every routed order is submitted unless the shared trade
    // rate refuses it
    let throttled = of_kind(&records, EventKind::ToolDenied)
        .into_iter()
        .filter(|r| r.record.body["tool"] == "submit-order" && r.record.body["error_kind"] == "rate_limited")
        .count() as u64;
    assert_eq!(s.submitted + throttled, s.auto_routed + s.approved);
}

#[test]
fn zero_ticks_only_provisions_credentials() {
    let (p, records) = run(Scenario::demo(42), 0);
    let s = p.summary();
    assert_eq!((s.signals, s.proposed, s.submitted), (0, 0, 0));
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.record.event_kind == EventKind::CredentialEvent));
}

#[test]
fn replay_is_deterministic_per_seed() {
    let a = run(Scenario::demo(9), 8).0.hashes();
    let b = run(Scenario::demo(9), 8).0.hashes();
    let c = run(Scenario::demo(10), 8).0.hashes();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn routing_ignores_misreported_values() {
    let mut s = Scenario::demo(5);
    s.agents.decision = DecisionVariant::Misreport;
    let (p, records) = run(s, 12);
    let routes = of_kind(&records, EventKind::RouteDecision);
    assert!(!routes.is_empty());
    for r in routes.iter().filter(|r| r.record.body["outcome"] == "routed") {
        let b = &r.record.body;
        assert_eq!(b["agent_estimated_value"], 1);
        let expected = if b["recomputed_value"].as_u64().unwrap() < b["threshold"].as_u64().unwrap() {
            "auto_execute"
        } else {
            "pending_approval"
        };
        assert_eq!(b["verdict"], expected);
    }
    assert!(p.summary().pending_routed >= 1);
    assert_clean(&p, &records);
}

#[test]
fn spoofed_client_in_payload_is_ignored() {
    let mut s = Scenario::demo(6);
    s.agents.decision = DecisionVariant::SpoofClient;
    let (p, records) = run(s, 12);
    let clients = trace_clients(&records);
    let routed: Vec<_> = of_kind(&records, EventKind::RouteDecision).into_iter().filter(|r| r.record.body["outcome"] == "routed").collect();
    assert!(!routed.is_empty());
    for r in routed {
        let bound = &clients[&r.record.trace.trace_id.to_hex()];
        assert_eq!(r.record.body["client_id"], bound.as_str());
    }
    assert_clean(&p, &records);
}

#[test]
fn reserved_param_is_refused_before_the_upstream() {
    let mut s = Scenario::demo(7);
    s.agents.decision = DecisionVariant::ReservedParam;
    let (p, records) = run(s, 10);
    let refused = of_kind(&records, EventKind::ToolDenied).into_iter().filter(|r| r.record.body["reason"] == "reserved_param").count();
    assert!(refused >= 1);
    let clients = trace_clients(&records);
    for hit in p.upstream_hits() {
        if let (Some(c), Some(bound)) = (&hit.client_id, clients.get(&hit.trace.trace_id.to_hex())) {
            assert_eq!(c, bound, "{} reached with foreign client", hit.tool);
        }
    }
}

#[test]
fn runaway_decision_is_cut_at_ten_turns() {
    let mut s = Scenario::demo(8);
    s.agents.decision = DecisionVariant::Runaway;
    let (p, records) = run(s, 4);
    let mut calls: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for r in &records {
        let e = calls.entry(r.record.trace.trace_id.to_hex()).or_default();
        match r.record.event_kind {
            EventKind::ModelCall => e.0 += 1,
            EventKind::ModelDenied if r.record.body["error_kind"] == "turn_cap_exceeded" => e.1 += 1,
            _ => {}
        }
    }
    let steps: Vec<_> = calls.values().filter(|(m, t)| m + t > 0).collect();
    assert!(!steps.is_empty());
    assert!(steps.iter().all(|&&(m, t)| m == 10 && t == 1), "{steps:?}");
    assert_eq!(p.summary().proposed, 0);
    assert_clean(&p, &records);
}

#[test]
fn deny_all_keeps_pending_orders_out_of_execution() {
    let mut s = Scenario::demo(42);
    s.approval = ApprovalMode::DenyAll;
    let (p, records) = run(s, 20);
    let sm = p.summary();
    assert!(sm.pending_routed >= 1);
    assert_eq!(sm.denied, sm.pending_routed);
    assert_eq!(sm.submitted, sm.auto_routed);
    assert_clean(&p, &records);
}

#[test]
fn manual_mode_leaves_orders_pending() {
    let mut s = Scenario::demo(42);
    s.approval = ApprovalMode::Manual;
    let (p, _) = run(s, 20);
    let sm = p.summary();
    assert_eq!(p.approvals().pending().len() as u64, sm.pending_routed);
    assert_eq!(sm.approved + sm.denied, 0);
}

#[test]
fn cross_channel_and_tool_probes_are_denied() {
    let mut s = Scenario::demo(11);
    s.agents.signal = SignalVariant::CrossChannel;
    s.agents.execution = ExecutionVariant::ToolProbe;
    let (p, records) = run(s, 12);
    let denied_hops = records
        .iter()
        .filter(|r| matches!(r.record.event_kind, EventKind::Produce | EventKind::Consume))
        .filter(|r| r.record.body["outcome"] == "denied" && r.record.actor.starts_with("signal-agent-"))
        .count();
    assert!(denied_hops >= 2);
    let probes = of_kind(&records, EventKind::ToolDenied)
        .into_iter()
        .filter(|r| r.record.actor == demo::EXECUTION && r.record.body["error_kind"] == "access_denied")
        .count();
    assert!(probes >= 2);
    assert!(!records.iter().any(|r| r.record.body["order_ref"] == "forged"));
    assert_clean(&p, &records);
}

#[test]
fn injected_headline_never_reaches_a_backend() {
    let mut s = Scenario::demo(3);
    s.injection_every = 2;
    let (p, records) = run(s, 12);
    let blocked = of_kind(&records, EventKind::GuardrailVerdict);
    assert!(!blocked.is_empty());
    assert!(blocked.iter().all(|r| r.record.body["error_kind"] == "guardrail_blocked_input"));
    assert_eq!(p.plane().total_backend_invocations(), of_kind(&records, EventKind::ModelCall).len() as u64);
    assert_clean(&p, &records);
}

#[test]
fn journal_matches_memory_and_detects_a_flip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.adpj");
    let p = Pipeline::with_journal(Scenario::demo(4), &path).unwrap();
    p.run(5);
    p.sync_journal().unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, p.plane().ledger().journal_bytes());
    assert_eq!(verify_journal(Execution::Auto, &bytes), ChainVerdict::Ok { records: p.plane().ledger().len() });
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    assert!(!verify_journal(Execution::Auto, &bytes).is_ok());
}

#[test]
fn short_fuzz_finds_no_leaks() {
    let r = fuzz_isolation(3, 1_500, 3);
    assert_eq!(r.calls, 1_500);
    assert!(r.succeeded > 0 && r.scoped_invocations > 0);
    assert!(r.foreign_payloads.is_empty(), "{:?}", r.foreign_payloads);
    assert!(r.out_of_scope_injections.is_empty(), "{:?}", r.out_of_scope_injections);
    assert_eq!(r.append_accepted, 0);
}

#[test]
fn parallel_sweep_matches_sequential() {
    let mut s = Scenario::demo(0);
    s.ticks = 6;
    let seeds = [1, 2, 3, 4];
    let a = sweep(Execution::Auto, &s, &seeds);
    let b = sweep(Execution::Sequential, &s, &seeds);
    let heads = |r: &[adp_core::pipeline::sweep::SeedReport]| r.iter().map(|x| x.summary.head_hash.clone()).collect::<Vec<_>>();
    assert_eq!(heads(&a), heads(&b));
    assert!(a.iter().all(|r| r.chain_ok && r.approval_violations == 0 && r.completeness_gaps == 0));
}
