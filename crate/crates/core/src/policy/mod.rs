//! Configuration-driven evaluation of every out-of-band constraint.
//!
//! All evaluators are pure functions of `(config, inputs, counter state)`.

pub mod acl;
pub mod budget;
pub mod guardrail;
pub mod rate;
pub mod redact;
pub mod schema;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acl::{check_channel_access, AccessVerdict, DenyReason, Direction};
pub use budget::{BudgetLedger, BudgetPeriod, BudgetPolicy, BudgetVerdict, PostHocCharge};
pub use guardrail::{
    evaluate_guardrails, CompiledGuardrail, GuardDirection, GuardrailAction, GuardrailKind,
    GuardrailRule, GuardrailVerdict,
};
pub use rate::{ActionClass, RateLimitPolicy, RateLimiter, RateVerdict};
pub use redact::{redact, redact_value, CompiledRedaction, RedactionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// Orders valued strictly below this (minor units) execute autonomously.
    pub autonomy_threshold: u64,
}

/// $1,000 in minor units.
pub const DEMO_AUTONOMY_THRESHOLD: u64 = 100_000;

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            autonomy_threshold: DEMO_AUTONOMY_THRESHOLD,
        }
    }
}

/// The policy document loaded at startup or via `POST /admin/policies`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub rate_policies: Vec<RateLimitPolicy>,
    #[serde(default)]
    pub budget_policies: Vec<BudgetPolicy>,
    #[serde(default)]
    pub guardrails: Vec<GuardrailRule>,
    #[serde(default)]
    pub redactions: Vec<RedactionRule>,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Invalid(String),
}

/// A validated, compiled [`PolicyConfig`].
#[derive(Debug, Clone)]
pub struct PolicySet {
    config: PolicyConfig,
    rates: BTreeMap<String, RateLimitPolicy>,
    budgets: BTreeMap<String, BudgetPolicy>,
    guardrails: Vec<CompiledGuardrail>,
    redactions: Vec<CompiledRedaction>,
}

impl PolicySet {
    pub fn compile(config: PolicyConfig) -> Result<Self, PolicyError> {
        let mut rates = BTreeMap::new();
        for p in &config.rate_policies {
            if p.window == 0 {
                return Err(PolicyError::Invalid(format!("rate policy `{}`: window must be > 0", p.id)));
            }
            if rates.insert(p.id.clone(), p.clone()).is_some() {
                return Err(PolicyError::Invalid(format!("duplicate rate policy `{}`", p.id)));
            }
        }
        let mut budgets = BTreeMap::new();
        for p in &config.budget_policies {
            if budgets.insert(p.id.clone(), p.clone()).is_some() {
                return Err(PolicyError::Invalid(format!("duplicate budget policy `{}`", p.id)));
            }
        }
        let guardrails = config
            .guardrails
            .iter()
            .cloned()
            .map(CompiledGuardrail::compile)
            .collect::<Result<Vec<_>, _>>()
            .map_err(PolicyError::Invalid)?;
        let redactions = redact::compile_redactions(&config.redactions).map_err(PolicyError::Invalid)?;
        Ok(Self {
            config,
            rates,
            budgets,
            guardrails,
            redactions,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let config: PolicyConfig =
            serde_json::from_str(text).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        Self::compile(config)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn rate(&self, id: &str) -> Option<&RateLimitPolicy> {
        self.rates.get(id)
    }

    pub fn budget(&self, id: &str) -> Option<&BudgetPolicy> {
        self.budgets.get(id)
    }

    /// Rate policies among `refs` that govern `class`.
    pub fn rates_for<'a>(&'a self, refs: &'a [String], class: ActionClass) -> impl Iterator<Item = &'a RateLimitPolicy> + 'a {
        refs.iter()
            .filter_map(|r| self.rates.get(r))
            .filter(move |p| p.action_class == class)
    }

    pub fn guardrails(&self) -> &[CompiledGuardrail] {
        &self.guardrails
    }

    pub fn redactions(&self) -> &[CompiledRedaction] {
        &self.redactions
    }

    pub fn threshold(&self) -> ThresholdPolicy {
        self.config.threshold
    }
}

impl Default for PolicySet {
    fn default() -> Self {
        Self::compile(PolicyConfig::default()).expect("empty config compiles")
    }
}
