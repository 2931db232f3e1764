//! Sliding-window rate limiting with check-and-record atomicity.

use std::collections::{HashMap, VecDeque};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Trade,
    ToolCall,
    ModelCall,
    Produce,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitPolicy {
    pub id: String,
    pub action_class: ActionClass,
    pub max_count: u64,
    /// Window length in logical ticks; must be positive.
    pub window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateVerdict {
    Allow,
    Deny,
}

/// Allowed-event history per `(principal, policy)`.
///
/// An event at `t` is inside the window at `now` iff `t ∈ (now − window, now]`.
#[derive(Debug, Default)]
pub struct RateLimiter {
    events: Mutex<HashMap<(String, String), VecDeque<u64>>>,
}

impl RateLimiter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check_rate(&self, principal_id: &str, policy: &RateLimitPolicy, now: u64) -> RateVerdict {
        if policy.max_count == 0 {
            return RateVerdict::Deny;
        }
        let mut events = self.events.lock();
        let history = events
            .entry((principal_id.to_string(), policy.id.clone()))
            .or_default();
        while history
            .front()
            .is_some_and(|&t| t.saturating_add(policy.window) <= now)
        {
            history.pop_front();
        }
        let in_window = history
            .iter()
            .filter(|&&t| t <= now && t.saturating_add(policy.window) > now)
            .count() as u64;
        if in_window < policy.max_count {
            history.push_back(now);
            RateVerdict::Allow
        } else {
            RateVerdict::Deny
        }
    }

    /// Allowed events currently remembered for the key (test and audit aid).
    pub fn recorded(&self, principal_id: &str, policy_id: &str) -> Vec<u64> {
        self.events
            .lock()
            .get(&(principal_id.to_string(), policy_id.to_string()))
            .map(|h| h.iter().copied().collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(max_count: u64, window: u64) -> RateLimitPolicy {
        RateLimitPolicy {
            id: "trades".into(),
            action_class: ActionClass::Trade,
            max_count,
            window,
        }
    }

    /// Scans the entire allowed-event history on every request.
    fn oracle(schedule: &[u64], max: u64, window: u64) -> Vec<bool> {
        let mut allowed: Vec<u64> = Vec::new();
        schedule
            .iter()
            .map(|&now| {
                let n = allowed
                    .iter()
                    .filter(|&&t| (now as i128 - window as i128) < t as i128 && t <= now)
                    .count() as u64;
                let ok = n < max;
                if ok {
                    allowed.push(now);
                }
                ok
            })
            .collect()
    }

    #[test]
    fn ten_per_hour() {
        // one tick = one minute
        let rl = RateLimiter::new();
        let p = policy(10, 60);
        for t in 1..=10 {
            assert_eq!(rl.check_rate("exec", &p, t), RateVerdict::Allow);
        }
        assert_eq!(rl.check_rate("exec", &p, 30), RateVerdict::Deny);
        // other principals are independent
        assert_eq!(rl.check_rate("other", &p, 30), RateVerdict::Allow);
    }

    #[test]
    fn zero_limit_denies_everything() {
        let rl = RateLimiter::new();
        let p = policy(0, 60);
        for t in 0..5 {
            assert_eq!(rl.check_rate("a", &p, t), RateVerdict::Deny);
        }
    }

    #[test]
    fn window_slides() {
        let rl = RateLimiter::new();
        let p = policy(10, 60);
        for t in 0..10 {
            assert_eq!(rl.check_rate("a", &p, t), RateVerdict::Allow);
        }
        assert_eq!(rl.check_rate("a", &p, 59), RateVerdict::Deny);
        assert_eq!(rl.check_rate("a", &p, 61), RateVerdict::Allow);
        let expected = oracle(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 59, 61], 10, 60);
        assert_eq!(expected.last(), Some(&true));
    }

    #[test]
    fn boundary_is_half_open() {
        let rl = RateLimiter::new();
        let p = policy(1, 10);
        assert_eq!(rl.check_rate("a", &p, 5), RateVerdict::Allow);
        assert_eq!(rl.check_rate("a", &p, 14), RateVerdict::Deny);
        assert_eq!(rl.check_rate("a", &p, 15), RateVerdict::Allow);
    }

    proptest! {
        #[test]
        fn matches_history_oracle(
            steps in proptest::collection::vec(0u64..20, 1..200),
            max in 0u64..8,
            window in 1u64..50,
        ) {
            let mut now = 0;
            let schedule: Vec<u64> = steps.iter().map(|d| { now += d; now }).collect();
            let rl = RateLimiter::new();
            let p = policy(max, window);
            let got: Vec<bool> = schedule
                .iter()
                .map(|&t| rl.check_rate("a", &p, t) == RateVerdict::Allow)
                .collect();
            prop_assert_eq!(got, oracle(&schedule, max, window));
        }
    }
}
