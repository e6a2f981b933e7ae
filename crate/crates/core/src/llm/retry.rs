use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Bounded exponential backoff. Attempt `n` (1-based) that fails waits
/// `base * factor^(n-1)`, capped at `max_delay`, before attempt `n + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            factor: 2.0,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self {
            base_delay_ms: 0,
            max_delay_ms: 0,
            ..Self::default()
        }
    }

    /// Delay after failed attempt `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_millis(ms.round() as u64)
    }

    /// Every delay the policy can incur, in order.
    pub fn schedule_ms(&self) -> Vec<u64> {
        (1..self.max_attempts)
            .map(|a| self.delay_after(a).as_millis() as u64)
            .collect()
    }
}

/// Token bucket refilled continuously at `requests_per_minute`.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    last: Instant,
}

impl TokenBucket {
    pub const DEFAULT_RPM: u32 = 60;

    pub fn new(requests_per_minute: u32, burst: u32, now: Instant) -> Self {
        let capacity = burst.max(1) as f64;
        Self {
            capacity,
            tokens: capacity,
            per_second: requests_per_minute.max(1) as f64 / 60.0,
            last: now,
        }
    }

    /// Takes one token, returning how long the caller must wait before
    /// sending. The token is consumed either way.
    pub fn reserve(&mut self, now: Instant) -> Duration {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = self.last.max(now);
        self.tokens = (self.tokens + elapsed * self.per_second).min(self.capacity);
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_second)
        }
    }
}
