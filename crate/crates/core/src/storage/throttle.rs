use serde::{Deserialize, Serialize};

use crate::clock::SimTime;

/// Token-bucket write limit for a key-value table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrottlePolicy {
    pub sustained_ops_per_sec: f64,
    pub burst_capacity: f64,
    pub enabled: bool,
}

impl ThrottlePolicy {
    pub const fn disabled() -> Self {
        ThrottlePolicy {
            sustained_ops_per_sec: 0.0,
            burst_capacity: 0.0,
            enabled: false,
        }
    }

    pub const fn new(sustained_ops_per_sec: f64, burst_capacity: f64) -> Self {
        ThrottlePolicy {
            sustained_ops_per_sec,
            burst_capacity,
            enabled: true,
        }
    }
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        ThrottlePolicy::disabled()
    }
}

/// Starts full. Tokens never exceed `burst_capacity`.
#[derive(Clone, Debug)]
pub struct TokenBucket {
    policy: ThrottlePolicy,
    tokens: f64,
    last: SimTime,
}

impl TokenBucket {
    pub fn new(policy: ThrottlePolicy) -> Self {
        TokenBucket {
            policy,
            tokens: policy.burst_capacity.max(0.0),
            last: SimTime::ZERO,
        }
    }

    pub fn policy(&self) -> ThrottlePolicy {
        self.policy
    }

    pub fn available(&self) -> f64 {
        self.tokens
    }

    fn refill(&mut self, now: SimTime) {
        // time never runs backwards for the bucket
        if now > self.last {
            let dt = (now - self.last).as_secs_f64();
            let cap = self.policy.burst_capacity.max(0.0);
            self.tokens = (self.tokens + dt * self.policy.sustained_ops_per_sec.max(0.0)).min(cap);
            self.last = now;
        }
    }

    /// Takes one token if available.
    pub fn try_acquire(&mut self, now: SimTime) -> bool {
        if !self.policy.enabled {
            return true;
        }
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn burst_only_bucket() {
        let mut b = TokenBucket::new(ThrottlePolicy::new(0.0, 5.0));
        let acks = (0..6).filter(|_| b.try_acquire(SimTime::ZERO)).count();
        assert_eq!(acks, 5);
        assert!(!b.try_acquire(SimTime::from_micros(10_000_000)));
    }

    #[test]
    fn disabled_policy_never_throttles() {
        let mut b = TokenBucket::new(ThrottlePolicy::disabled());
        assert!((0..10_000).all(|_| b.try_acquire(SimTime::ZERO)));
    }

    #[test]
    fn refills_at_sustained_rate() {
        let mut b = TokenBucket::new(ThrottlePolicy::new(10.0, 2.0));
        assert!(b.try_acquire(SimTime::ZERO));
        assert!(b.try_acquire(SimTime::ZERO));
        assert!(!b.try_acquire(SimTime::ZERO));
        // 100 ms at 10 ops/s is exactly one token
        assert!(b.try_acquire(SimTime::from_micros(100_000)));
        assert!(!b.try_acquire(SimTime::from_micros(100_000)));
    }

    proptest! {
        #[test]
        fn window_bound(rate in 0.0f64..200.0, burst in 0.0f64..50.0,
                        gaps in proptest::collection::vec(0u64..20_000, 1..400)) {
            let mut b = TokenBucket::new(ThrottlePolicy::new(rate, burst));
            let mut now = 0u64;
            let mut acks = 0u64;
            for g in &gaps {
                now += g;
                if b.try_acquire(SimTime::from_micros(now)) { acks += 1; }
                prop_assert!(b.available() <= burst + 1e-9);
            }
            let window = now as f64 / 1e6;
            prop_assert!(acks as f64 <= burst + rate * window + 1e-6);
        }
    }
}
