//! Scenario files: world fixture, policy, agent variants and approval mode.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ai::{BackendDescriptor, RoutingPolicy, RoutingStrategy};
use crate::policy::PolicyConfig;
use crate::world::{ClientConfig, SymbolConfig, WorldConfig};

use super::demo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalVariant {
    #[default]
    Benign,
    /// Also tries to produce to and read from the client's execution channel.
    CrossChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionVariant {
    #[default]
    Benign,
    /// Never stops calling tools.
    Runaway,
    /// Reports a tiny estimated value for an oversized order.
    Misreport,
    /// Claims to act for another client inside its payload.
    SpoofClient,
    /// Tries to pass `client_id` to a scoped tool first.
    ReservedParam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionVariant {
    #[default]
    Benign,
    /// Also probes tools outside its ACL.
    ToolProbe,
}

impl SignalVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalVariant::Benign => "benign",
            SignalVariant::CrossChannel => "cross_channel",
        }
    }
}

impl DecisionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionVariant::Benign => "benign",
            DecisionVariant::Runaway => "runaway",
            DecisionVariant::Misreport => "misreport",
            DecisionVariant::SpoofClient => "spoof_client",
            DecisionVariant::ReservedParam => "reserved_param",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Benign, Self::Runaway, Self::Misreport, Self::SpoofClient, Self::ReservedParam]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentVariants {
    #[serde(default)]
    pub signal: SignalVariant,
    #[serde(default)]
    pub decision: DecisionVariant,
    #[serde(default)]
    pub execution: ExecutionVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalMode {
    /// Decisions arrive through the approval API.
    #[default]
    Manual,
    ApproveAll,
    DenyAll,
    /// Approve, deny, approve, ... in pending order.
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub ticks: u64,
    pub clients: Vec<ClientConfig>,
    pub symbols: Vec<SymbolConfig>,
    #[serde(default = "default_volatility")]
    pub volatility_bp: u64,
    #[serde(default = "default_polls")]
    pub polls_to_fill: u32,
    #[serde(default)]
    pub injection_every: u64,
    #[serde(default = "default_signal_threshold")]
    pub signal_strength_threshold: u8,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    /// Order values (minor units) the scripted decision backend aims for.
    #[serde(default = "default_targets")]
    pub order_targets: Vec<u64>,
    #[serde(default = "demo::default_policy")]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub agents: AgentVariants,
    #[serde(default)]
    pub approval: ApprovalMode,
    #[serde(default = "demo::default_backends")]
    pub backends: Vec<BackendDescriptor>,
    #[serde(default)]
    pub routing: Option<RoutingPolicy>,
}

fn default_volatility() -> u64 {
    100
}

fn default_polls() -> u32 {
    2
}

fn default_signal_threshold() -> u8 {
    7
}

fn default_max_turns() -> u32 {
    10
}

fn default_targets() -> Vec<u64> {
    vec![40_000, 90_000, 150_000]
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.clients.is_empty() {
            return bad("no clients");
        }
        for c in &self.clients {
            if !crate::policy::acl::is_valid_client_id(&c.id) {
                return bad(&format!("client id `{}` is not a valid channel segment", c.id));
            }
        }
        if self.max_turns == 0 {
            return bad("max_turns must be positive");
        }
        if self.order_targets.is_empty() || self.order_targets.contains(&0) {
            return bad("order_targets must be non-empty and positive");
        }
        if self.backends.is_empty() {
            return bad("no model backends");
        }
        if let Some(r) = &self.routing {
            if r.allow_list.is_empty() {
                return bad("routing allow_list is empty");
            }
        }
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            clients: self.clients.clone(),
            symbols: self.symbols.clone(),
            volatility_bp: self.volatility_bp,
            polls_to_fill: self.polls_to_fill,
            injection_every: self.injection_every,
        }
    }

    pub fn routing_policy(&self) -> RoutingPolicy {
        self.routing.clone().unwrap_or_else(|| RoutingPolicy {
            strategy: RoutingStrategy::MinCost,
            allow_list: self.backends.iter().map(|b| b.id.clone()).collect(),
        })
    }

    /// The two-client benign demo.
    pub fn demo(seed: u64) -> Self {
        Self::from_json(demo::DEMO_SCENARIO).map(|mut s| {
            s.seed = seed;
            s
        })
        .expect("bundled demo scenario is valid")
    }
}
