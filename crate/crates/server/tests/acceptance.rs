//! Acceptance criteria. Each test prints one `criterion NN ...: PASS|FAIL`
//! line and compares the system against an oracle written here.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use adp_core::ai::{Message, ModelErrorKind, ModelRequest, Role};
use adp_core::broker::{BrokerError, Envelope, EnvelopeMeta};
use adp_core::canonical::ZERO_HASH;
use adp_core::ledger::journal::{encode_frame, encode_journal, read_journal, verify_journal};
use adp_core::ledger::{parse_traceparent, ChainVerdict, EventKind, SealedRecord};
use adp_core::mcp::{ToolCall, ToolErrorKind};
use adp_core::par::Execution;
use adp_core::pipeline::adversary::fuzz_isolation;
use adp_core::pipeline::agents::ProposedOrder;
use adp_core::pipeline::router::{self, RouteOutcome, RouteVerdict};
use adp_core::pipeline::scenario::DecisionVariant;
use adp_core::pipeline::scripted::system_prompt;
use adp_core::pipeline::{audit, demo, ApprovalMode, Pipeline, Scenario};
use adp_core::plane::HopContext;
use adp_core::policy::acl::{check_channel_access, Direction};
use adp_core::policy::rate::{ActionClass, RateLimitPolicy, RateLimiter, RateVerdict};
use adp_core::world::{Side, World, INJECTED_HEADLINE, SUBMIT_ORDER};
use adp_server::{app, AppState};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn report(n: u8, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => println!("criterion {n:02} {name}: PASS ({detail})"),
        Err(why) => {
            println!("criterion {n:02} {name}: FAIL ({why})");
            panic!("criterion {n:02} {name} failed: {why}");
        }
    }
}

fn run(s: Scenario, ticks: u64) -> (Pipeline, Vec<SealedRecord>) {
    let p = Pipeline::new(s).expect("scenario is valid");
    p.run(ticks);
    let records = p.plane().ledger().snapshot();
    (p, records)
}

fn by_trace(records: &[SealedRecord]) -> BTreeMap<String, Vec<&SealedRecord>> {
    let mut out: BTreeMap<String, Vec<&SealedRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.record.trace.trace_id.to_hex()).or_default().push(r);
    }
    out
}

fn w3c_traceparent(s: &str) -> bool {
    let re = Regex::new(r"^([0-9a-f]{2})-([0-9a-f]{32})-([0-9a-f]{16})-([0-9a-f]{2})$").unwrap();
    let Some(c) = re.captures(s) else { return false };
    &c[1] != "ff" && c[2].bytes().any(|b| b != b'0') && c[3].bytes().any(|b| b != b'0')
}

// ---------------------------------------------------------------- 1

const FLAT_SCENARIO: &str = r#"{
  "seed": 17,
  "clients": [
    {"id": "c1", "cash": 100000000, "positions": [
      {"symbol": "ACME", "quantity": 10000, "avg_cost": 10000},
      {"symbol": "BOLT", "quantity": 10000, "avg_cost": 10000}]},
    {"id": "c2", "cash": 100000000, "positions": [
      {"symbol": "CRUX", "quantity": 10000, "avg_cost": 10000}]}
  ],
  "symbols": [
    {"symbol": "ACME", "initial_price": 10000},
    {"symbol": "BOLT", "initial_price": 10000},
    {"symbol": "CRUX", "initial_price": 10000}
  ],
  "volatility_bp": 0,
  "order_targets": [50000, 100000, 150000]
}"#;

fn threshold_routing() -> Outcome {
    let s = Scenario::from_json(FLAT_SCENARIO).map_err(|e| e.to_string())?;
    ensure!(s.policy.threshold.autonomy_threshold == 100_000, "threshold is not $1,000");
    let (_, records) = run(s, 30);
    // $500 executes, $1,000 and $1,500 wait for a human
    let expected: BTreeMap<u64, &str> = [(50_000, "execute"), (100_000, "pending"), (150_000, "pending")].into();
    let mut seen: BTreeMap<u64, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.record.event_kind == EventKind::RouteDecision) {
        let b = &r.record.body;
        ensure!(b["outcome"] == "routed", "seq {} not routed: {b}", r.record.seq);
        let value = b["recomputed_value"].as_u64().unwrap_or(0);
        let Some(&want) = expected.get(&value) else {
            return Err(format!("seq {} recomputed {value}, not one of the seeded values", r.record.seq));
        };
        let client = b["client_id"].as_str().unwrap_or_default();
        let (verdict, channel) = match want {
            "execute" => ("auto_execute", format!("orders.execute.{client}")),
            _ => ("pending_approval", format!("orders.pending_approval.{client}")),
        };
        ensure!(b["verdict"] == verdict && b["destination"] == channel.as_str(), "seq {}: {value} routed {b}", r.record.seq);
        let forwarded = records.iter().any(|x| {
            x.record.event_kind == EventKind::Produce
                && x.record.actor == demo::ROUTER
                && x.record.trace.trace_id == r.record.trace.trace_id
                && x.record.body["channel"] == channel.as_str()
                && x.record.body["outcome"] == "ok"
        });
        ensure!(forwarded, "seq {}: router did not produce to {channel}", r.record.seq);
        *seen.entry(value).or_default() += 1;
    }
    ensure!(seen.len() == 3, "not every value was produced: {seen:?}");
    Ok(format!("routed counts by value {seen:?}"))
}

#[test]
fn criterion_01_threshold_routing() {
    report(1, "threshold routing", threshold_routing());
}

// ---------------------------------------------------------------- 2

fn without_estimate(o: RouteOutcome) -> RouteOutcome {
    match o {
        RouteOutcome::Routed(mut r) => {
            r.agent_estimated_value = 0;
            RouteOutcome::Routed(r)
        }
        d => d,
    }
}

fn value_independence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scenario = Scenario::demo(2);
    let world = World::new(scenario.world_config()).map_err(|e| e.to_string())?;
    world.advance_to(40);
    let symbols: Vec<String> = scenario.symbols.iter().map(|s| s.symbol.clone()).collect();
    let trace = parse_traceparent("00-0af7651916cd43dd8448eb211c80319c-b7ad6b7169203331-01").unwrap();
    let mut variants = 0u64;
    for i in 0..1_000u64 {
        let symbol = symbols[rng.random_range(0..symbols.len())].clone();
        let quantity = if rng.random_bool(0.02) { u64::MAX / 3 } else { rng.random_range(1..=400) };
        let client = if rng.random_bool(0.5) { "c1" } else { "c2" };
        let threshold = [50_000, 100_000, 250_000][rng.random_range(0..3)];
        let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
        let price = world.reference_price(&symbol).unwrap();
        let truth = quantity.checked_mul(price);
        let estimates = [
            0,
            1,
            u64::MAX,
            u64::MAX / 2,
            truth.unwrap_or(0),
            truth.unwrap_or(0).saturating_mul(1_000),
            threshold - 1,
            threshold,
            rng.random(),
        ];
        let mut outcomes = Vec::new();
        for est in estimates {
            let order = ProposedOrder { symbol: symbol.clone(), side, quantity, agent_estimated_value: est, rationale: "r".into() };
            let env = Envelope {
                payload: serde_json::to_vec(&order).unwrap(),
                meta: EnvelopeMeta {
                    producer_principal: demo::DECISION.into(),
                    trace,
                    logical_time: 40,
                    offset: i,
                    client_binding: Some(client.into()),
                },
            };
            outcomes.push(without_estimate(router::decide(&env, &world, threshold)));
            variants += 1;
        }
        ensure!(outcomes.windows(2).all(|w| w[0] == w[1]), "order {i}: estimate changed the outcome {outcomes:?}");
        match (&outcomes[0], truth) {
            (RouteOutcome::Routed(r), Some(v)) => {
                let (verdict, dest) = if v < threshold {
                    (RouteVerdict::AutoExecute, format!("orders.execute.{client}"))
                } else {
                    (RouteVerdict::PendingApproval, format!("orders.pending_approval.{client}"))
                };
                ensure!(r.verdict == verdict && r.destination == dest, "order {i}: {r:?} vs value {v}");
            }
            (RouteOutcome::Discarded { reason, .. }, None) => ensure!(reason == "value_overflow", "order {i}: {reason}"),
            (o, t) => return Err(format!("order {i}: {o:?} for true value {t:?}")),
        }
    }

    // the same through the broker and the router credential
    let p = Pipeline::new(Scenario::demo(2)).map_err(|e| e.to_string())?;
    let decision = p.token(demo::DECISION).unwrap().to_string();
    let router_token = p.token(demo::ROUTER).unwrap().to_string();
    let mut routed = 0;
    for i in 0..100u64 {
        let symbol = symbols[(i as usize) % symbols.len()].clone();
        let quantity = rng.random_range(1..=40);
        let client = if i % 2 == 0 { "c1" } else { "c2" };
        let mut dests = Vec::new();
        for est in [1, u64::MAX] {
            let order = ProposedOrder { symbol: symbol.clone(), side: Side::Buy, quantity, agent_estimated_value: est, rationale: "r".into() };
            let produced = p
                .plane()
                .produce(&HopContext::root().bound(client), &decision, demo::PROPOSED, &serde_json::to_vec(&order).unwrap())
                .map_err(|e| e.to_string())?;
            let res = router::route_one(p.plane(), p.world(), &router_token, produced.offset).map_err(|e| e.0)?;
            match res.map(|r| r.outcome) {
                Some(RouteOutcome::Routed(r)) => dests.push((r.verdict, r.destination, r.recomputed_value)),
                other => return Err(format!("broker order {i} not routed: {other:?}")),
            }
            routed += 1;
        }
        ensure!(dests[0] == dests[1], "broker order {i}: {dests:?}");
    }
    Ok(format!("{variants} decisions over 1000 orders, {routed} routed through the broker"))
}

#[test]
fn criterion_02_routing_value_independence() {
    report(2, "routing value-independence", value_independence());
}

// ---------------------------------------------------------------- 3

fn scope_isolation() -> Outcome {
    let r = fuzz_isolation(33, 10_000, 4);
    ensure!(r.calls >= 10_000, "only {} calls", r.calls);
    ensure!(r.scoped_invocations > 0, "no scoped upstream reached");
    ensure!(r.foreign_payloads.is_empty(), "foreign payloads: {:?}", r.foreign_payloads);
    ensure!(r.out_of_scope_injections.is_empty(), "out-of-scope injections: {:?}", r.out_of_scope_injections);
    ensure!(r.append_accepted == 0, "{} ledger appends accepted from agents", r.append_accepted);
    Ok(format!("{} calls, {} succeeded, {} scoped upstream invocations", r.calls, r.succeeded, r.scoped_invocations))
}

#[test]
fn criterion_03_scope_isolation() {
    report(3, "scope isolation", scope_isolation());
}

// ---------------------------------------------------------------- 4

/// The declared channel matrix.
fn declared(principal: &str, channel: &str, dir: Direction, clients: &[&str]) -> bool {
    let any = |prefix: &str| clients.iter().any(|c| channel == format!("{prefix}{c}"));
    match (principal, dir) {
        ("decision-agent", Direction::Consume) => any("signals."),
        ("decision-agent", Direction::Produce) => channel == "orders.proposed",
        ("execution-agent", Direction::Consume) => any("orders.execute."),
        ("approver", Direction::Consume) => any("orders.pending_approval."),
        ("approver", Direction::Produce) => any("orders.execute."),
        ("order-router", Direction::Consume) => channel == "orders.proposed",
        ("order-router", Direction::Produce) => any("orders.execute.") || any("orders.pending_approval."),
        (p, Direction::Produce) => p.strip_prefix("signal-agent-").is_some_and(|c| channel == format!("signals.{c}")),
        _ => false,
    }
}

fn acl_matrix() -> Outcome {
    let p = Pipeline::new(Scenario::demo(4)).map_err(|e| e.to_string())?;
    let clients = ["c1", "c2"];
    let mut channels = vec!["orders.proposed".to_string()];
    for c in clients {
        channels.extend([format!("signals.{c}"), format!("orders.pending_approval.{c}"), format!("orders.execute.{c}")]);
    }
    let creds = demo::credentials(p.clients());
    ensure!(creds.len() == 6, "unexpected demo credential table");
    let mut cells = 0;
    let mut allowed = 0;
    for (principal, scope) in &creds {
        let token = p.token(&principal.id).ok_or_else(|| format!("no token for {}", principal.id))?;
        for ch in &channels {
            for dir in [Direction::Produce, Direction::Consume] {
                let attempt = match dir {
                    Direction::Produce => p.plane().produce(&HopContext::root(), token, ch, b"{}").map(|_| ()),
                    Direction::Consume => p.plane().consume(&HopContext::root(), token, ch, 0, 1).map(|_| ()),
                };
                let got = match attempt {
                    Ok(()) => true,
                    Err(BrokerError::ChannelAccessDenied) => false,
                    Err(e) => return Err(format!("{} {dir:?} {ch}: {e}", principal.id)),
                };
                let want = declared(&principal.id, ch, dir, &clients);
                let policy = check_channel_access(scope, ch, dir).is_allowed();
                ensure!(got == want, "{} {dir:?} {ch}: broker {got}, declared {want}", principal.id);
                ensure!(policy == want, "{} {dir:?} {ch}: policy {policy}, declared {want}", principal.id);
                cells += 1;
                allowed += got as u32;
            }
        }
    }
    Ok(format!("{cells} cells, {allowed} allowed"))
}

#[test]
fn criterion_04_acl_matrix() {
    report(4, "ACL matrix", acl_matrix());
}

// ---------------------------------------------------------------- 5

fn rate_limit() -> Outcome {
    let p = Pipeline::new(Scenario::demo(5)).map_err(|e| e.to_string())?;
    let policy = p.plane().policy();
    let trade = policy.rate(demo::TRADE_RATE).ok_or("no trade rate policy")?.clone();
    ensure!(trade.max_count == 10, "trade rate is {} per window", trade.max_count);
    let exec = p.token(demo::EXECUTION).unwrap().to_string();
    let submit = |p: &Pipeline| {
        let call = ToolCall { tool: SUBMIT_ORDER.into(), args: json!({"symbol": "ACME", "side": "buy", "quantity": 1}) };
        p.plane().call_tool(&HopContext::root().bound("c1"), &exec, &call).map_err(|e| e.0)
    };
    for i in 1..=10 {
        let out = submit(&p)?;
        ensure!(out.result.ok, "submission {i} refused: {:?}", out.result.error_kind);
    }
    let eleventh = submit(&p)?;
    ensure!(eleventh.result.error_kind == Some(ToolErrorKind::RateLimited), "11th: {:?}", eleventh.result);
    let recs = p.plane().ledger().snapshot();
    let denial: Vec<_> = recs.iter().filter(|r| r.record.trace == eleventh.span).collect();
    ensure!(
        denial.len() == 1 && denial[0].record.event_kind == EventKind::ToolDenied && denial[0].record.body["error_kind"] == "rate_limited",
        "11th submission recorded as {denial:?}"
    );
    p.plane().advance_clock(trade.window);
    ensure!(submit(&p)?.result.ok, "submission after the window refused");

    // sliding window against the full event history
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut decisions = 0;
    for schedule in 0..1_000 {
        let policy = RateLimitPolicy {
            id: "r".into(),
            action_class: ActionClass::Trade,
            max_count: rng.random_range(0..=12),
            window: rng.random_range(1..=30),
        };
        let limiter = RateLimiter::new();
        let mut history: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        let mut now = 0u64;
        for _ in 0..80 {
            now += rng.random_range(0..=4);
            let who = if rng.random_bool(0.7) { "a" } else { "b" };
            let accepted = history.entry(who).or_default();
            let in_window = accepted.iter().filter(|&&t| t <= now && now < t + policy.window).count() as u64;
            let want = in_window < policy.max_count;
            let got = limiter.check_rate(who, &policy, now) == RateVerdict::Allow;
            ensure!(got == want, "schedule {schedule} at {now} for {who}: limiter {got}, oracle {want}");
            if want {
                accepted.push(now);
            }
            decisions += 1;
        }
    }
    Ok(format!("10 accepted, 11th rate_limited; {decisions} decisions over 1000 schedules"))
}

#[test]
fn criterion_05_rate_limit() {
    report(5, "rate limit", rate_limit());
}

// ---------------------------------------------------------------- 6

fn request(i: u64) -> ModelRequest {
    let signal = json!({"symbol": "ACME", "direction_hint": "bullish", "rationale": format!("call {i}"), "source_discovery": {"id": format!("d{i}")}});
    ModelRequest {
        messages: vec![Message::new(Role::System, system_prompt(DecisionVariant::Benign)), Message::new(Role::User, signal.to_string())],
        tool_schemas: vec![],
        max_turn_tokens: 512,
    }
}

fn budget_cap() -> Outcome {
    const BUDGET: u64 = 1_000;
    let mut s = Scenario::demo(6);
    s.policy.budget_policies.iter_mut().for_each(|b| b.max_tokens = BUDGET);
    // keep the model-call rate out of the way
    s.policy.rate_policies.iter_mut().filter(|r| r.id == demo::MODEL_RATE).for_each(|r| r.max_count = 1_000_000);
    let p = Pipeline::new(s).map_err(|e| e.to_string())?;
    let token = p.token(demo::DECISION).unwrap().to_string();
    let plane = p.plane();

    let results: Vec<Vec<_>> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..8u64)
            .map(|t| {
                let token = &token;
                sc.spawn(move || {
                    (0..30u64)
                        .map(|i| plane.complete(&HopContext::root(), token, &request(t * 100 + i)).expect("audit"))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let recs = plane.ledger().snapshot();
    let mut per_span: BTreeMap<String, Vec<&SealedRecord>> = BTreeMap::new();
    for r in &recs {
        per_span.entry(r.record.trace.to_string()).or_default().push(r);
    }
    let mut exhausted = 0;
    for thread in &results {
        let mut seen_exhaustion = false;
        for out in thread {
            let rs = per_span.get(&out.span.to_string()).map(Vec::as_slice).unwrap_or_default();
            ensure!(rs.len() == 1, "call {} has {} records", out.span, rs.len());
            match &out.result {
                Ok(_) => {
                    ensure!(!seen_exhaustion, "a call succeeded after this caller saw exhaustion");
                    ensure!(rs[0].record.event_kind == EventKind::ModelCall, "success recorded as {:?}", rs[0].record.event_kind);
                }
                Err(ModelErrorKind::BudgetExhausted) => {
                    seen_exhaustion = true;
                    exhausted += 1;
                    ensure!(
                        rs[0].record.event_kind == EventKind::ModelDenied && rs[0].record.body["error_kind"] == "budget_exhausted",
                        "exhaustion recorded as {}",
                        rs[0].record.body
                    );
                }
                Err(e) => return Err(format!("unexpected failure {e:?}")),
            }
        }
    }
    let calls: Vec<_> = recs.iter().filter(|r| r.record.event_kind == EventKind::ModelCall).collect();
    let charged: u64 = calls.iter().map(|r| r.record.body["budget"]["charged"].as_u64().unwrap_or(u64::MAX)).sum();
    ensure!(charged <= BUDGET, "charged {charged} > budget {BUDGET}");
    ensure!(calls.iter().any(|r| r.record.body["budget"]["remaining"] == 0), "budget never exhausted");
    ensure!(exhausted > 0, "no call observed exhaustion");

    let invocations = plane.total_backend_invocations();
    for i in 0..20 {
        let before = plane.ledger().len();
        let out = plane.complete(&HopContext::root(), &token, &request(10_000 + i)).map_err(|e| e.0)?;
        ensure!(out.result.as_ref().err() == Some(&ModelErrorKind::BudgetExhausted), "post-exhaustion call {i}: {:?}", out.result);
        let added = &plane.ledger().snapshot()[before as usize..];
        ensure!(
            added.len() == 1 && added[0].record.body["error_kind"] == "budget_exhausted",
            "post-exhaustion call {i} wrote {} records",
            added.len()
        );
    }
    ensure!(plane.total_backend_invocations() == invocations, "backend invoked after exhaustion");
    Ok(format!("{} calls succeeded, charged {charged}/{BUDGET}, {exhausted} concurrent + 20 sequential denials", calls.len()))
}

#[test]
fn criterion_06_budget_cap() {
    report(6, "budget cap", budget_cap());
}

// ---------------------------------------------------------------- 7

fn sha256_chain(prev: &[u8; 32], body: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(body);
    h.finalize().into()
}

/// First position at which the stored bytes stop being a valid chain.
fn first_broken(bytes: &[u8]) -> Option<u64> {
    let mut pos = 0usize;
    let mut prev = [0u8; 32];
    let mut i = 0u64;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Some(i);
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let start = pos + 4;
        if bytes.len() - start < len {
            return Some(i);
        }
        let frame = &bytes[start..start + len];
        let check = || -> Option<[u8; 32]> {
            let v: Value = serde_json::from_slice(frame).ok()?;
            // canonical form: sorted keys, no whitespace
            if serde_json::to_vec(&v).ok()? != frame {
                return None;
            }
            let obj = v.as_object()?;
            if obj.len() != 3 || v["record"]["seq"].as_u64()? != i || v["prev_hash"].as_str()? != hex::encode(prev) {
                return None;
            }
            let this = sha256_chain(&prev, serde_json::to_string(&v["record"]).ok()?.as_bytes());
            (v["this_hash"].as_str()? == hex::encode(this)).then_some(this)
        };
        match check() {
            Some(h) => prev = h,
            None => return Some(i),
        }
        pos = start + len;
        i += 1;
    }
    None
}

fn frame_bounds(bytes: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        out.push((pos, pos + 4 + len));
        pos += 4 + len;
    }
    out
}

fn tamper_evidence() -> Outcome {
    let (p, records) = run(Scenario::demo(7), 20);
    let bytes = p.plane().ledger().journal_bytes();
    let n = records.len();
    ensure!(first_broken(&bytes).is_none(), "oracle rejects the untampered journal");
    ensure!(verify_journal(Execution::Auto, &bytes) == ChainVerdict::Ok { records: n as u64 }, "untampered journal rejected");
    let frames = frame_bounds(&bytes);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let check = |kind: &str, i: usize, tampered: &[u8], expected: u64| -> Result<(), String> {
        let oracle = first_broken(tampered);
        ensure!(oracle == Some(expected), "{kind} {i}: oracle says {oracle:?}, expected {expected}");
        for exec in [Execution::Auto, Execution::Sequential] {
            let got = verify_journal(exec, tampered);
            ensure!(got == ChainVerdict::BrokenAt { seq: expected }, "{kind} {i}: verify says {got:?}, expected {expected}");
        }
        Ok(())
    };

    for i in 0..500 {
        let at = rng.random_range(0..bytes.len());
        let mask: u8 = rng.random_range(1..=255);
        let mut t = bytes.clone();
        t[at] ^= mask;
        let frame = frames.iter().position(|&(s, e)| s <= at && at < e).unwrap() as u64;
        check("flip", i, &t, frame)?;
    }

    for i in 0..50 {
        // a trailing deletion is indistinguishable from a shorter ledger
        let k = rng.random_range(0..n - 1);
        let t = if i % 2 == 0 {
            let (s, e) = frames[k];
            [&bytes[..s], &bytes[e..]].concat()
        } else {
            // delete, then re-link every later record to its new predecessor
            let mut recs = read_journal(&bytes).unwrap();
            recs.remove(k);
            let mut prev = if k == 0 { ZERO_HASH } else { recs[k - 1].this_hash };
            for r in recs.iter_mut().skip(k) {
                *r = SealedRecord::seal(r.record.clone(), prev);
                prev = r.this_hash;
            }
            encode_journal(&recs)
        };
        check("deletion", i, &t, k as u64)?;
    }

    for i in 0..50 {
        let k = rng.random_range(0..n);
        let (s, _) = frames[k];
        let (forged, expected) = match i % 3 {
            // replay of another stored record
            0 => {
                let j = rng.random_range(0..n);
                let (a, b) = frames[j];
                let dup = bytes[a..b].to_vec();
                let expected = if j == k { k + 1 } else { k };
                (dup, expected as u64)
            }
            // a well-formed record linked to its predecessor
            1 => {
                let mut rec = records[k].record.clone();
                rec.actor = "forger".into();
                let prev = if k == 0 { ZERO_HASH } else { records[k - 1].this_hash };
                (encode_frame(&SealedRecord::seal(rec, prev)), k as u64 + 1)
            }
            _ => {
                let junk: Vec<u8> = (0..rng.random_range(1..64)).map(|_| rng.random()).collect();
                let mut f = (junk.len() as u32).to_be_bytes().to_vec();
                f.extend(junk);
                (f, k as u64)
            }
        };
        let t = [&bytes[..s], &forged[..], &bytes[s..]].concat();
        check("insertion", i, &t, expected)?;
    }
    Ok(format!("{n} records; 500 flips, 50 deletions, 50 insertions located exactly"))
}

#[test]
fn criterion_07_tamper_evidence() {
    report(7, "tamper evidence", tamper_evidence());
}

// ---------------------------------------------------------------- 8

fn trace_completeness() -> Outcome {
    let s = Scenario::demo(42);
    let polls = s.polls_to_fill as usize;
    let (_, records) = run(s, 20);
    for r in &records {
        let tp = r.to_value()["record"]["trace"].as_str().unwrap_or_default().to_string();
        ensure!(w3c_traceparent(&tp), "seq {} carries traceparent {tp:?}", r.record.seq);
    }
    // scripted decision plan: positions, buying power, price history, then the answer
    let plan = 3;
    let mut filled = 0;
    let mut pending_path = 0;
    for (trace, rs) in by_trace(&records) {
        if !rs.iter().any(|r| r.record.event_kind == EventKind::OrderFilled) {
            continue;
        }
        filled += 1;
        let count = |pred: &dyn Fn(&SealedRecord) -> bool| rs.iter().filter(|r| pred(r)).count();
        let kind = |k: EventKind| count(&|r| r.record.event_kind == k);
        let tool = |actor: &str, name: Option<&str>| {
            count(&|r| {
                r.record.event_kind == EventKind::ToolCall
                    && r.record.actor.starts_with(actor)
                    && name.is_none_or(|n| r.record.body["tool"] == n)
            })
        };
        let hops = |k: EventKind| {
            let mut chans: Vec<String> = rs
                .iter()
                .filter(|r| r.record.event_kind == k && r.record.body["outcome"] == "ok")
                .map(|r| r.record.body["channel"].as_str().unwrap_or_default().split('.').take(2).collect::<Vec<_>>().join("."))
                .collect();
            chans.sort();
            chans
        };
        let pending = rs.iter().any(|r| r.record.event_kind == EventKind::RouteDecision && r.record.body["verdict"] == "pending_approval");
        pending_path += pending as usize;
        let client = rs[0].record.client.clone().unwrap_or_default();
        let mut want_hops = vec![format!("signals.{client}"), "orders.proposed".to_string(), "orders.execute".to_string()];
        if pending {
            want_hops.push("orders.pending_approval".to_string());
        }
        want_hops = want_hops.iter().map(|c| c.split('.').take(2).collect::<Vec<_>>().join(".")).collect();
        want_hops.sort();

        let got = [
            tool("signal-agent-", Some("research-query")),
            kind(EventKind::ModelCall),
            tool(demo::DECISION, None),
            kind(EventKind::RouteDecision),
            kind(EventKind::ApprovalDecision),
            kind(EventKind::OrderSubmitted),
            kind(EventKind::OrderFilled),
            tool(demo::EXECUTION, Some("poll-order")),
        ];
        let want = [1, plan + 1, plan, 1, pending as usize, 1, 1, polls];
        ensure!(got == want, "trace {trace}: counts {got:?}, expected {want:?}");
        ensure!(hops(EventKind::Produce) == want_hops, "trace {trace}: produces {:?}", hops(EventKind::Produce));
        ensure!(hops(EventKind::Consume) == want_hops, "trace {trace}: consumes {:?}", hops(EventKind::Consume));
        // one tree: every parent is a recorded span except a single root
        let spans: BTreeSet<_> = rs.iter().map(|r| r.record.trace.span_id).collect();
        let dangling: BTreeSet<_> = rs.iter().map(|r| r.record.parent_span).filter(|p| !p.is_some_and(|p| spans.contains(&p))).collect();
        ensure!(dangling.len() == 1, "trace {trace} has {} roots", dangling.len());
    }
    ensure!(filled > 0 && pending_path > 0 && pending_path < filled, "benign run lacks both paths: {filled} filled, {pending_path} pending");
    Ok(format!("{filled} filled orders ({pending_path} via approval), {} traceparents valid", records.len()))
}

#[test]
fn criterion_08_trace_completeness() {
    report(8, "trace completeness", trace_completeness());
}

// ---------------------------------------------------------------- 9

fn turn_cap() -> Outcome {
    let mut s = Scenario::demo(9);
    s.agents.decision = DecisionVariant::Runaway;
    ensure!(s.max_turns == 10, "turn cap is {}", s.max_turns);
    let (_, records) = run(s, 6);
    let mut steps = 0;
    for (trace, rs) in by_trace(&records) {
        let model: Vec<_> = rs
            .iter()
            .filter(|r| matches!(r.record.event_kind, EventKind::ModelCall | EventKind::ModelDenied))
            .collect();
        if model.is_empty() {
            continue;
        }
        steps += 1;
        let calls = model.iter().filter(|r| r.record.event_kind == EventKind::ModelCall).count();
        ensure!(calls == 10, "trace {trace}: {calls} model calls");
        ensure!(model.len() == 11, "trace {trace}: {} model records", model.len());
        let last = model.last().unwrap();
        ensure!(
            last.record.event_kind == EventKind::ModelDenied && last.record.body["error_kind"] == "turn_cap_exceeded",
            "trace {trace}: step ended with {}",
            last.record.body
        );
        let proposed = rs.iter().any(|r| r.record.event_kind == EventKind::Produce && r.record.body["channel"] == demo::PROPOSED);
        ensure!(!proposed, "trace {trace}: a capped step still proposed an order");
    }
    ensure!(steps > 0, "no decision steps ran");
    Ok(format!("{steps} runaway steps, each 10 model calls then turn_cap_exceeded"))
}

#[test]
fn criterion_09_turn_cap() {
    report(9, "turn cap", turn_cap());
}

// ---------------------------------------------------------------- 10

fn determinism() -> Outcome {
    let seeds = [1u64, 2, 3, 42, 1_000, u64::MAX];
    let mut seqs = Vec::new();
    for &seed in &seeds {
        let a = run(Scenario::demo(seed), 12).0.hashes();
        let b = run(Scenario::demo(seed), 12).0.hashes();
        ensure!(a == b, "seed {seed}: two runs differ");
        seqs.push(a);
    }
    for i in 0..seeds.len() {
        for j in i + 1..seeds.len() {
            ensure!(seqs[i] != seqs[j], "seeds {} and {} produced the same sequence", seeds[i], seeds[j]);
        }
    }
    Ok(format!("{} seeds replayed equal, pairwise distinct", seeds.len()))
}

#[test]
fn criterion_10_determinism() {
    report(10, "determinism", determinism());
}

// ---------------------------------------------------------------- 11

fn guardrail_blocking() -> Outcome {
    let p = Pipeline::new(Scenario::demo(11)).map_err(|e| e.to_string())?;
    let token = p.token(demo::DECISION).unwrap().to_string();
    let plane = p.plane();
    let mut req = request(1);
    req.messages[1] = Message::new(Role::User, json!({"symbol": "ACME", "rationale": format!("ACME update: {INJECTED_HEADLINE}")}).to_string());
    let before = plane.total_backend_invocations();
    let len = plane.ledger().len();
    let out = plane.complete(&HopContext::root(), &token, &req).map_err(|e| e.0)?;
    ensure!(out.result.as_ref().err() == Some(&ModelErrorKind::GuardrailBlockedInput), "headline not blocked: {:?}", out.result);
    ensure!(plane.total_backend_invocations() == before, "backend invoked for a blocked input");
    let added = &plane.ledger().snapshot()[len as usize..];
    ensure!(
        added.len() == 1 && added[0].record.event_kind == EventKind::GuardrailVerdict,
        "blocked call wrote {:?}",
        added.iter().map(|r| r.record.event_kind).collect::<Vec<_>>()
    );

    // the headline arriving through research, signal and decision agents
    let mut s = Scenario::demo(11);
    s.injection_every = 2;
    let (p, records) = run(s, 12);
    let mut blocked = 0;
    for (trace, rs) in by_trace(&records) {
        let Some(first) = rs.iter().position(|r| r.record.event_kind == EventKind::GuardrailVerdict) else { continue };
        blocked += 1;
        ensure!(rs[first].record.body["error_kind"] == "guardrail_blocked_input", "trace {trace}: {}", rs[first].record.body);
        ensure!(!rs.iter().any(|r| r.record.event_kind == EventKind::ModelCall), "trace {trace}: a model call ran");
    }
    let calls = records.iter().filter(|r| r.record.event_kind == EventKind::ModelCall).count() as u64;
    ensure!(blocked > 0, "no injected headline reached the gateway");
    ensure!(p.plane().total_backend_invocations() == calls, "{} backend invocations for {calls} model calls", p.plane().total_backend_invocations());
    Ok(format!("direct block plus {blocked} blocked steps; backend counter unchanged"))
}

#[test]
fn criterion_11_guardrail_blocking() {
    report(11, "guardrail blocking", guardrail_blocking());
}

// ---------------------------------------------------------------- 12

async fn call(app: &Router, method: Method, uri: &str, token: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("authorization", format!("Bearer {token}"));
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[derive(Default)]
struct Necessity {
    executed_above: u64,
    denied: u64,
    undecided: u64,
}

/// Walks the ledger in order: an order at or above the threshold may reach
/// an execution channel, or be submitted, only after an approved decision.
fn approval_oracle(records: &[SealedRecord]) -> Result<Necessity, String> {
    let mut routed: BTreeMap<String, (bool, String)> = BTreeMap::new();
    let mut approved = BTreeSet::new();
    let mut executable = BTreeSet::new();
    let mut decided = BTreeSet::new();
    let mut n = Necessity::default();
    for s in records {
        let r = &s.record;
        let b = &r.body;
        match r.event_kind {
            EventKind::RouteDecision if b["outcome"] == "routed" => {
                let above = b["recomputed_value"].as_u64().unwrap() >= b["threshold"].as_u64().unwrap();
                routed.insert(b["order_ref"].as_str().unwrap().into(), (above, b["client_id"].as_str().unwrap().into()));
            }
            EventKind::ApprovalDecision => {
                let order = b["order_ref"].as_str().unwrap().to_string();
                ensure!(decided.insert(order.clone()), "seq {}: {order} decided twice", r.seq);
                if b["decision"] == "approved" {
                    approved.insert(order);
                } else {
                    n.denied += 1;
                }
            }
            EventKind::Produce if b["outcome"] == "ok" => {
                let Some(client) = b["channel"].as_str().and_then(|c| c.strip_prefix("orders.execute.")) else { continue };
                let payload: Value = serde_json::from_str(b["payload"].as_str().unwrap_or_default()).unwrap_or(Value::Null);
                let order = payload["order_ref"].as_str().unwrap_or_default().to_string();
                let Some((above, bound)) = routed.get(&order) else {
                    return Err(format!("seq {}: {order:?} reached execution unrouted", r.seq));
                };
                ensure!(bound == client, "seq {}: {order} reached another client's channel", r.seq);
                if *above {
                    ensure!(approved.contains(&order), "seq {}: {order} reached execution without approval", r.seq);
                    n.executed_above += 1;
                }
                executable.insert(order);
            }
            EventKind::OrderSubmitted => {
                let order = b["order_ref"].as_str().unwrap_or_default();
                ensure!(executable.contains(order), "seq {}: {order} submitted before reaching execution", r.seq);
            }
            _ => {}
        }
    }
    n.undecided = routed.iter().filter(|(o, (above, _))| *above && !decided.contains(*o)).count() as u64;
    Ok(n)
}

async fn approval_necessity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let variants = [DecisionVariant::Benign, DecisionVariant::Misreport, DecisionVariant::SpoofClient];
    let mut total = Necessity::default();
    let mut http_decisions = 0;
    let mut refused = 0;
    for run_no in 0..100 {
        let mut s = Scenario::demo(rng.random_range(0..1_000_000));
        s.approval = ApprovalMode::Manual;
        s.agents.decision = variants[rng.random_range(0..variants.len())];
        let ticks = rng.random_range(4..=12);
        let p = Arc::new(Pipeline::new(s).map_err(|e| e.to_string())?);
        let app = app(AppState::new(p.clone()), None);
        let approver = p.token(demo::APPROVER).unwrap().to_string();
        let intruder = p.token(demo::EXECUTION).unwrap().to_string();
        for _ in 0..ticks {
            p.step();
            let (status, pending) = call(&app, Method::GET, "/approvals/pending", &approver, None).await;
            ensure!(status == StatusCode::OK, "run {run_no}: pending listing returned {status}");
            for order in pending.as_array().cloned().unwrap_or_default() {
                let order_ref = order["order_ref"].as_str().unwrap().to_string();
                let uri = format!("/approvals/{order_ref}");
                if rng.random_bool(0.1) {
                    let (status, _) = call(&app, Method::POST, &uri, &intruder, Some(json!({"decision": "approved"}))).await;
                    ensure!(status == StatusCode::FORBIDDEN, "run {run_no}: execution credential approved {order_ref} ({status})");
                    refused += 1;
                }
                let decision = match rng.random_range(0..3) {
                    0 => "approved",
                    1 => "denied",
                    _ => continue,
                };
                let (status, body) = call(&app, Method::POST, &uri, &approver, Some(json!({"decision": decision, "note": "acceptance"}))).await;
                ensure!(status == StatusCode::OK && body["decision"] == decision, "run {run_no}: {order_ref} {decision} -> {status} {body}");
                http_decisions += 1;
            }
        }
        let records = p.plane().ledger().snapshot();
        let n = approval_oracle(&records).map_err(|e| format!("run {run_no}: {e}"))?;
        let audit = audit::approval_necessity(&records);
        ensure!(audit.is_empty(), "run {run_no}: audit disagrees with the oracle: {audit:?}");
        total.executed_above += n.executed_above;
        total.denied += n.denied;
        total.undecided += n.undecided;
    }
    ensure!(total.executed_above > 0 && total.denied > 0 && total.undecided > 0, "runs never exercised every path");
    Ok(format!(
        "100 runs, {http_decisions} HTTP decisions, {refused} intruder attempts refused, {} approved executions, {} denied, {} left pending",
        total.executed_above, total.denied, total.undecided
    ))
}

#[tokio::test]
async fn criterion_12_approval_necessity() {
    report(12, "approval necessity", approval_necessity().await);
}
