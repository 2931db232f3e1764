//! Token budgets with atomic check-and-charge.

use std::collections::HashMap;
use std::fmt;

use parking_lot::Mutex;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetPeriod {
    Total,
    /// Consumption resets every `n` ticks (bucketed by `now / n`).
    Ticks(u64),
}

impl Serialize for BudgetPeriod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BudgetPeriod::Total => s.serialize_str("total"),
            BudgetPeriod::Ticks(n) => s.serialize_u64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for BudgetPeriod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PeriodVisitor;
        impl Visitor<'_> for PeriodVisitor {
            type Value = BudgetPeriod;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"total\" or a positive tick count")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<BudgetPeriod, E> {
                if v == 0 {
                    Err(E::custom("budget period must be positive"))
                } else {
                    Ok(BudgetPeriod::Ticks(v))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<BudgetPeriod, E> {
                if v == "total" {
                    Ok(BudgetPeriod::Total)
                } else {
                    Err(E::custom(format!("unknown budget period `{v}`")))
                }
            }
        }
        d.deserialize_any(PeriodVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub id: String,
    pub max_tokens: u64,
    pub period: BudgetPeriod,
}

impl BudgetPolicy {
    fn bucket(&self, now: u64) -> u64 {
        match self.period {
            BudgetPeriod::Total => 0,
            BudgetPeriod::Ticks(n) => now / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum BudgetVerdict {
    Allow { remaining: u64 },
    Deny { remaining: u64 },
}

/// Outcome of a post-hoc charge: usage beyond the cap is reported as
/// overshoot and never added to the counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PostHocCharge {
    pub charged: u64,
    pub overshoot: u64,
    pub remaining: u64,
}

type Key = (String, String, u64);

#[derive(Debug, Default)]
pub struct BudgetLedger {
    consumed: Mutex<HashMap<Key, u64>>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(principal_id: &str, policy: &BudgetPolicy, now: u64) -> Key {
        (principal_id.to_string(), policy.id.clone(), policy.bucket(now))
    }

    /// Allow iff `consumed + tokens ≤ max_tokens`; a denial leaves the
    /// counter untouched.
    pub fn charge_budget(
        &self,
        principal_id: &str,
        policy: &BudgetPolicy,
        tokens: u64,
        now: u64,
    ) -> BudgetVerdict {
        let mut map = self.consumed.lock();
        let used = map.entry(Self::key(principal_id, policy, now)).or_insert(0);
        match used.checked_add(tokens) {
            Some(total) if total <= policy.max_tokens => {
                *used = total;
                BudgetVerdict::Allow {
                    remaining: policy.max_tokens - total,
                }
            }
            _ => BudgetVerdict::Deny {
                remaining: policy.max_tokens.saturating_sub(*used),
            },
        }
    }

    /// Charges observed usage after the fact, saturating at the cap.
    pub fn charge_post_hoc(
        &self,
        principal_id: &str,
        policy: &BudgetPolicy,
        tokens: u64,
        now: u64,
    ) -> PostHocCharge {
        let mut map = self.consumed.lock();
        let used = map.entry(Self::key(principal_id, policy, now)).or_insert(0);
        let room = policy.max_tokens.saturating_sub(*used);
        let charged = tokens.min(room);
        *used += charged;
        PostHocCharge {
            charged,
            overshoot: tokens - charged,
            remaining: policy.max_tokens - *used,
        }
    }

    pub fn remaining(&self, principal_id: &str, policy: &BudgetPolicy, now: u64) -> u64 {
        policy
            .max_tokens
            .saturating_sub(self.consumed(principal_id, policy, now))
    }

    pub fn consumed(&self, principal_id: &str, policy: &BudgetPolicy, now: u64) -> u64 {
        self.consumed
            .lock()
            .get(&Self::key(principal_id, policy, now))
            .copied()
            .unwrap_or(0)
    }
}
