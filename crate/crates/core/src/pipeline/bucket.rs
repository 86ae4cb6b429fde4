use serde::{Deserialize, Serialize};

use super::Nanos;

pub const SECOND: Nanos = 1_000_000_000;

/// Token bucket in its virtual-scheduling form: one token is earned every
/// `interval` and at most `burst` may be held.
///
/// Over any closed window of `w` seconds at most `floor(w / interval) + burst`
/// requests are admitted, which never exceeds `ceil(limit * w) + burst`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBucket {
    interval: Nanos,
    tolerance: Nanos,
    /// Theoretical arrival time of the next conforming request.
    tat: Nanos,
    burst: u32,
}

/// `max(limit, 1)` rounded up.
pub fn default_burst(limit: f64) -> u32 {
    limit.ceil().max(1.0) as u32
}

impl TokenBucket {
    /// `limit` requests per second; panics unless `limit > 0` and `burst >= 1`.
    pub fn new(limit: f64, burst: u32) -> Self {
        assert!(limit > 0.0 && limit.is_finite(), "rate limit must be positive");
        assert!(burst >= 1, "burst must be at least 1");
        let interval = (SECOND as f64 / limit).ceil().max(1.0) as Nanos;
        TokenBucket { interval, tolerance: interval * Nanos::from(burst - 1), tat: 0, burst }
    }

    pub fn interval(&self) -> Nanos {
        self.interval
    }

    pub fn burst(&self) -> u32 {
        self.burst
    }

    /// Admits a request at `now` if a token is available.
    pub fn try_admit(&mut self, now: Nanos) -> bool {
        if self.tat > now + self.tolerance {
            return false;
        }
        self.tat = self.tat.max(now) + self.interval;
        true
    }

    /// Earliest time at or after `now` when a request can be admitted,
    /// without reserving it.
    pub fn next_admission(&self, now: Nanos) -> Nanos {
        now.max(self.tat.saturating_sub(self.tolerance))
    }

    /// Reserves the earliest admission at or after `now` and returns it.
    pub fn reserve(&mut self, now: Nanos) -> Nanos {
        let at = self.next_admission(now);
        self.tat = self.tat.max(at) + self.interval;
        at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_delay() {
        let mut b = TokenBucket::new(2.0, default_burst(2.0));
        let now = 5 * SECOND;
        let admitted = (0..10).filter(|_| b.try_admit(now)).count();
        assert_eq!(admitted, 2);
        assert!(admitted <= 4);
        assert_eq!(b.next_admission(now), now + SECOND / 2);
    }

    #[test]
    fn idle_then_immediate() {
        let mut b = TokenBucket::new(2.0, 2);
        for _ in 0..3 {
            b.reserve(0);
        }
        assert!(b.try_admit(10 * SECOND));
    }

    #[test]
    fn reservations_are_spaced() {
        let mut b = TokenBucket::new(4.0, 1);
        let times: Vec<Nanos> = (0..4).map(|_| b.reserve(0)).collect();
        assert_eq!(times, vec![0, SECOND / 4, SECOND / 2, 3 * SECOND / 4]);
    }
}
