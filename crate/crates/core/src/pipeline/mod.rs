//! The demo pipeline: signal, decision and execution agents behind the
//! gateways, the order router, and the approval service, driven tick by
//! tick under a seed.

pub mod adversary;
pub mod agents;
pub mod approval;
pub mod audit;
pub mod demo;
pub mod port;
pub mod router;
pub mod scenario;
pub mod scripted;
pub mod sweep;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::ai::ProviderKey;
use crate::canonical::Hash32;
use crate::ledger::{LedgerError, TraceContext};
use crate::mcp::{Upstream, UpstreamCall, UpstreamError};
use crate::plane::DataPlane;
use crate::policy::PolicySet;
use crate::world::World;

use approval::{ApprovalService, Decision};
use port::AgentPort;
use router::{RouteOutcome, RouteVerdict};
pub use scenario::{ApprovalMode, ConfigError, Scenario};

/// Polls the execution agent makes before giving up on an order.
pub const MAX_POLLS: u32 = 10;

/// One scoped upstream invocation as seen by the upstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpstreamHit {
    pub tool: String,
    pub client_id: Option<String>,
    pub trace: TraceContext,
}

/// Wraps an upstream and records the scope it was invoked with.
pub struct RecordingUpstream {
    inner: Arc<dyn Upstream>,
    log: Arc<Mutex<Vec<UpstreamHit>>>,
}

impl Upstream for RecordingUpstream {
    fn invoke(&self, call: &UpstreamCall) -> Result<serde_json::Value, UpstreamError> {
        self.log.lock().push(UpstreamHit { tool: call.tool.clone(), client_id: call.client_id.clone(), trace: call.trace });
        self.inner.invoke(call)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ticks: u64,
    pub signals: u64,
    pub proposed: u64,
    pub auto_routed: u64,
    pub pending_routed: u64,
    pub discarded: u64,
    pub approved: u64,
    pub denied: u64,
    pub submitted: u64,
    pub filled: u64,
    pub rejected: u64,
    pub denials: u64,
    pub transcript_len: u64,
    pub head_hash: String,
}

#[derive(Debug, Default)]
struct Cursors {
    tick: u64,
    signals: BTreeMap<String, u64>,
    proposed: u64,
    execute: BTreeMap<String, u64>,
    alternate: u64,
    summary: RunSummary,
}

/// The demo deployment wired onto one data plane.
pub struct Pipeline {
    scenario: Scenario,
    plane: Arc<DataPlane>,
    world: Arc<World>,
    admin: String,
    tokens: BTreeMap<String, String>,
    clients: Vec<String>,
    approvals: ApprovalService,
    upstream_log: Arc<Mutex<Vec<UpstreamHit>>>,
    cursors: Mutex<Cursors>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("seed", &self.scenario.seed).field("plane", &self.plane).finish_non_exhaustive()
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl Pipeline {
    pub fn new(scenario: Scenario) -> Result<Self, ConfigError> {
        Self::build(scenario, None)
    }

    /// Like [`Pipeline::new`], journaling every record to `ledger`.
    pub fn with_journal(scenario: Scenario, ledger: &Path) -> Result<Self, ConfigError> {
        Self::build(scenario, Some(ledger))
    }

    fn build(scenario: Scenario, ledger: Option<&Path>) -> Result<Self, ConfigError> {
        scenario.validate()?;
        let policy = PolicySet::compile(scenario.policy.clone()).map_err(invalid)?;
        let plane = Arc::new(DataPlane::new(scenario.seed, policy));
        if let Some(path) = ledger {
            plane.attach_journal(path).map_err(invalid)?;
        }
        let world = Arc::new(World::new(scenario.world_config()).map_err(invalid)?);
        let admin = plane.bootstrap_admin().map_err(invalid)?.token;
        let clients = world.client_ids();

        let upstream_log = Arc::new(Mutex::new(Vec::new()));
        for (desc, up) in world.upstreams() {
            let wrapped = Arc::new(RecordingUpstream { inner: up, log: upstream_log.clone() });
            plane.register_upstream(&admin, desc, wrapped).map_err(invalid)?;
        }
        let backend = Arc::new(scripted::ScriptedBackend::new(scenario.seed, scenario.order_targets.clone()));
        for b in &scenario.backends {
            let key = ProviderKey::new(format!("sk-{}-{:032x}", b.id, rand::random::<u128>()));
            plane.register_backend(&admin, b.clone(), key, backend.clone()).map_err(invalid)?;
        }
        plane.set_routing(&admin, scenario.routing_policy()).map_err(invalid)?;
        for ch in demo::channels(&clients) {
            plane.create_channel(&admin, &ch).map_err(invalid)?;
        }
        let mut tokens = BTreeMap::new();
        for (principal, scope) in demo::credentials(&clients) {
            let id = principal.id.clone();
            plane.register_principal(&admin, principal).map_err(invalid)?;
            let cred = plane.issue_credential(&admin, &id, scope, None).map_err(invalid)?;
            tokens.insert(id, cred.token);
        }
        Ok(Self {
            scenario,
            plane,
            world,
            admin,
            tokens,
            clients,
            approvals: ApprovalService::default(),
            upstream_log,
            cursors: Mutex::new(Cursors::default()),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn plane(&self) -> &Arc<DataPlane> {
        &self.plane
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn clients(&self) -> &[String] {
        &self.clients
    }

    pub fn approvals(&self) -> &ApprovalService {
        &self.approvals
    }

    pub fn admin_token(&self) -> &str {
        &self.admin
    }

    /// The credential token issued to a demo principal.
    pub fn token(&self, principal: &str) -> Option<&str> {
        self.tokens.get(principal).map(String::as_str)
    }

    pub fn upstream_hits(&self) -> Vec<UpstreamHit> {
        self.upstream_log.lock().clone()
    }

    pub fn tick(&self) -> u64 {
        self.cursors.lock().tick
    }

    fn port<'a>(&'a self, principal: &str) -> AgentPort<'a> {
        let token = self.tokens.get(principal).map(String::as_str).unwrap_or_default();
        AgentPort::new(&self.plane, token, self.scenario.max_turns)
    }

    /// Advances the world and clock one tick and runs every stage once.
    pub fn step(&self) {
        let mut cur = self.cursors.lock();
        cur.tick += 1;
        let tick = cur.tick;
        self.plane.advance_clock(tick.saturating_sub(self.plane.now()));
        self.world.advance_to(tick);
        let variants = self.scenario.agents;

        for c in &self.clients {
            let topic = self
                .scenario
                .clients
                .iter()
                .find(|x| &x.id == c)
                .map(|x| x.research_topic.clone())
                .unwrap_or_default();
            let mut port = self.port(&demo::signal_principal(c)).under(None);
            let channel = demo::signals(c);
            if agents::signal_agent(&mut port, &channel, &topic, self.scenario.signal_strength_threshold, variants.signal).is_some() {
                cur.summary.signals += 1;
            }
        }

        for c in &self.clients {
            let channel = demo::signals(c);
            let end = self.plane.end_offset(&channel).unwrap_or(0);
            while cur.signals.get(c).copied().unwrap_or(0) < end {
                let offset = cur.signals.get(c).copied().unwrap_or(0);
                cur.signals.insert(c.clone(), offset + 1);
                let mut port = self.port(demo::DECISION).bind(c);
                let Ok(payloads) = port.consume(&channel, offset, 1) else { continue };
                for p in payloads {
                    if agents::decision_agent(&mut port, &p, variants.decision).is_some() {
                        cur.summary.proposed += 1;
                    }
                }
            }
        }

        let router_token = self.tokens.get(demo::ROUTER).cloned().unwrap_or_default();
        let end = self.plane.end_offset(demo::PROPOSED).unwrap_or(0);
        while cur.proposed < end {
            let offset = cur.proposed;
            cur.proposed += 1;
            if let Ok(Some(res)) = router::route_one(&self.plane, &self.world, &router_token, offset) {
                match res.outcome {
                    RouteOutcome::Routed(r) if r.verdict == RouteVerdict::AutoExecute => cur.summary.auto_routed += 1,
                    RouteOutcome::Routed(_) => cur.summary.pending_routed += 1,
                    RouteOutcome::Discarded { .. } => cur.summary.discarded += 1,
                }
            }
        }

        self.approvals.scan(&self.plane, &self.clients);
        let approver = self.tokens.get(demo::APPROVER).cloned().unwrap_or_default();
        for order in self.approvals.pending() {
            let decision = match self.scenario.approval {
                ApprovalMode::Manual => continue,
                ApprovalMode::ApproveAll => Decision::Approved,
                ApprovalMode::DenyAll => Decision::Denied,
                ApprovalMode::Alternate => {
                    cur.alternate += 1;
                    if cur.alternate % 2 == 1 { Decision::Approved } else { Decision::Denied }
                }
            };
            let _ = self.approvals.decide(&self.plane, &approver, &order.order_ref, decision, "auto");
        }

        for c in &self.clients {
            let channel = demo::execute(c);
            let end = self.plane.end_offset(&channel).unwrap_or(0);
            while cur.execute.get(c).copied().unwrap_or(0) < end {
                let offset = cur.execute.get(c).copied().unwrap_or(0);
                cur.execute.insert(c.clone(), offset + 1);
                let mut port = self.port(demo::EXECUTION).bind(c);
                let Ok(payloads) = port.consume(&channel, offset, 1) else { continue };
                for p in payloads {
                    let order_ref = serde_json::from_slice::<agents::ExecutableOrder>(&p).map(|o| o.order_ref).unwrap_or_default();
                    port.set_order_ref(&order_ref);
                    if let Some(status) = agents::execution_agent(&mut port, &p, variants.execution, MAX_POLLS) {
                        cur.summary.submitted += 1;
                        match status["status"].as_str() {
                            Some("filled") => cur.summary.filled += 1,
                            _ => cur.summary.rejected += 1,
                        }
                    }
                }
            }
        }
        cur.summary.ticks = tick;
    }

    /// Runs `ticks` more ticks and returns the summary.
    pub fn run(&self, ticks: u64) -> RunSummary {
        for _ in 0..ticks {
            self.step();
        }
        self.summary()
    }

    pub fn summary(&self) -> RunSummary {
        let mut s = self.cursors.lock().summary.clone();
        let decisions = self.approvals.decisions();
        s.approved = decisions.iter().filter(|d| d.decision == Decision::Approved).count() as u64;
        s.denied = decisions.iter().filter(|d| d.decision == Decision::Denied).count() as u64;
        let records = self.plane.ledger().snapshot();
        s.denials = records.iter().filter(|r| audit::is_denial(&r.record)).count() as u64;
        s.transcript_len = records.len() as u64;
        s.head_hash = records.last().map(|r| hex::encode(r.this_hash)).unwrap_or_default();
        s
    }

    pub fn hashes(&self) -> Vec<Hash32> {
        self.plane.ledger().hashes()
    }

    pub fn sync_journal(&self) -> Result<(), LedgerError> {
        self.plane.ledger().sync_journal()
    }
}

/// Builds the scenario's pipeline and runs its configured ticks.
pub fn run_pipeline(scenario: Scenario) -> Result<(Pipeline, RunSummary), ConfigError> {
    let ticks = scenario.ticks;
    let p = Pipeline::new(scenario)?;
    let s = p.run(ticks);
    Ok((p, s))
}
