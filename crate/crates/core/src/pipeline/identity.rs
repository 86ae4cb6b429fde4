use serde::{Deserialize, Serialize};

use super::bucket::{default_burst, TokenBucket, SECOND};
use super::{Nanos, PipelineError};

/// One egress identity (a proxy in live mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub id: usize,
    /// Proxy URL such as `socks5://host:port`; `None` connects directly.
    pub endpoint: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    /// Unhealthy for the pool's reboot duration, then healthy again.
    Reboot,
    /// Permanently unhealthy.
    Dead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at: Nanos,
    pub kind: FaultKind,
}

/// Identities with their health schedules and rate limiters. Health is a
/// function of time, so faults can be scheduled ahead for simulated runs.
#[derive(Clone, Debug)]
pub struct IdentityPool {
    identities: Vec<Identity>,
    faults: Vec<Vec<Fault>>,
    buckets: Vec<TokenBucket>,
    reboot_duration: Nanos,
    limit: f64,
    cursor: usize,
}

impl IdentityPool {
    /// `n` direct identities limited to `limit` requests per second each.
    pub fn new(n: usize, limit: f64, burst: Option<u32>) -> Result<Self, PipelineError> {
        Self::with_endpoints((0..n).map(|_| None).collect(), limit, burst)
    }

    pub fn with_endpoints(endpoints: Vec<Option<String>>, limit: f64, burst: Option<u32>) -> Result<Self, PipelineError> {
        if !(limit > 0.0) || !limit.is_finite() {
            return Err(PipelineError::InvalidConfig(format!("rate limit {limit} must be positive")));
        }
        if endpoints.is_empty() {
            return Err(PipelineError::InvalidConfig("identity pool is empty".into()));
        }
        let burst = burst.unwrap_or_else(|| default_burst(limit));
        if burst == 0 {
            return Err(PipelineError::InvalidConfig("burst must be at least 1".into()));
        }
        let n = endpoints.len();
        Ok(IdentityPool {
            identities: endpoints.into_iter().enumerate().map(|(id, endpoint)| Identity { id, endpoint }).collect(),
            faults: vec![Vec::new(); n],
            buckets: vec![TokenBucket::new(limit, burst); n],
            reboot_duration: 60 * SECOND,
            limit,
            cursor: 0,
        })
    }

    pub fn with_reboot_duration(mut self, d: Nanos) -> Self {
        self.reboot_duration = d;
        self
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn burst(&self) -> u32 {
        self.buckets[0].burst()
    }

    pub fn identity(&self, id: usize) -> Result<&Identity, PipelineError> {
        self.identities.get(id).ok_or(PipelineError::UnknownIdentity(id))
    }

    /// Records a fault on `id` starting at `at`.
    pub fn inject_fault(&mut self, id: usize, kind: FaultKind, at: Nanos) -> Result<(), PipelineError> {
        let faults = self.faults.get_mut(id).ok_or(PipelineError::UnknownIdentity(id))?;
        faults.push(Fault { at, kind });
        faults.sort_by_key(|f| f.at);
        Ok(())
    }

    pub fn is_healthy(&self, id: usize, now: Nanos) -> bool {
        self.faults[id].iter().all(|f| match f.kind {
            FaultKind::Dead => now < f.at,
            FaultKind::Reboot => now < f.at || now >= f.at + self.reboot_duration,
        })
    }

    pub fn healthy_count(&self, now: Nanos) -> usize {
        (0..self.len()).filter(|&i| self.is_healthy(i, now)).count()
    }

    /// Earliest time after `now` at which some identity becomes healthy
    /// again, if any will.
    pub fn next_recovery(&self, now: Nanos) -> Option<Nanos> {
        (0..self.len())
            .filter_map(|id| {
                let mut t = now;
                // step over overlapping reboots
                for _ in 0..=self.faults[id].len() {
                    if self.is_healthy(id, t) {
                        return Some(t);
                    }
                    t = self.faults[id]
                        .iter()
                        .filter(|f| f.kind == FaultKind::Reboot && f.at <= t && t < f.at + self.reboot_duration)
                        .map(|f| f.at + self.reboot_duration)
                        .max()?;
                }
                None
            })
            .min()
    }

    /// Round-robin choice among identities healthy at `now`.
    pub fn next_healthy(&mut self, now: Nanos) -> Option<usize> {
        let n = self.len();
        for step in 0..n {
            let id = (self.cursor + step) % n;
            if self.is_healthy(id, now) {
                self.cursor = (id + 1) % n;
                return Some(id);
            }
        }
        None
    }

    /// Reserves the next admission slot of `id` at or after `now`.
    pub fn reserve(&mut self, id: usize, now: Nanos) -> Nanos {
        self.buckets[id].reserve(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_skips_unhealthy() {
        let mut pool = IdentityPool::new(3, 1.0, None).unwrap();
        pool.inject_fault(1, FaultKind::Dead, 0).unwrap();
        let picks: Vec<_> = (0..4).map(|_| pool.next_healthy(5).unwrap()).collect();
        assert_eq!(picks, vec![0, 2, 0, 2]);
    }

    #[test]
    fn reboot_recovers() {
        let mut pool = IdentityPool::new(2, 1.0, None).unwrap().with_reboot_duration(10 * SECOND);
        for id in 0..2 {
            pool.inject_fault(id, FaultKind::Reboot, SECOND).unwrap();
        }
        assert_eq!(pool.healthy_count(0), 2);
        assert_eq!(pool.healthy_count(2 * SECOND), 0);
        assert_eq!(pool.next_healthy(2 * SECOND), None);
        assert_eq!(pool.next_recovery(2 * SECOND), Some(11 * SECOND));
        assert_eq!(pool.healthy_count(11 * SECOND), 2);
    }

    #[test]
    fn dead_is_permanent_and_unknown_is_an_error() {
        let mut pool = IdentityPool::new(1, 1.0, None).unwrap();
        pool.inject_fault(0, FaultKind::Dead, 0).unwrap();
        assert_eq!(pool.next_recovery(0), None);
        assert!(matches!(pool.inject_fault(7, FaultKind::Reboot, 0), Err(PipelineError::UnknownIdentity(7))));
    }
}
