//! Two-phase fetch pipeline: listings, then policy pages.
//!
//! A coordinator hands tasks from a shared queue to workers. Each request
//! goes out through an identity chosen round-robin among the healthy ones
//! and is admitted by that identity's token bucket. Tasks that time out or
//! are rate limited are retried in later passes; dead links are final.
//!
//! Two executors share this logic: a discrete-event one on a simulated clock
//! (deterministic, used with fixture transports) and a threaded one on the
//! wall clock for live crawling.

mod bucket;
mod identity;
mod transport;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{AppRecord, CorpusError, FetchStatus, PageClass, PolicyDocument, PolicyStore};
use crate::policy_detector::{classify_page, DetectorModel};

pub use bucket::{default_burst, TokenBucket, SECOND};
pub use identity::{Fault, FaultKind, Identity, IdentityPool};
#[cfg(feature = "http")]
pub use transport::HttpTransport;
pub use transport::{FixturePage, FixtureServer, Response, ResponseKind, Transport};

/// Nanoseconds since the start of a run.
pub type Nanos = u64;

pub const HOUR: Nanos = 3600 * SECOND;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error("result store is full ({capacity} tasks)")]
    StoreFull { capacity: usize },
    #[error("unknown identity {0}")]
    UnknownIdentity(usize),
    #[error("no identity is healthy or will recover")]
    NoHealthyIdentities,
    #[error("duplicate task id {0}")]
    DuplicateTask(u64),
    #[error("task {0} is not a policy fetch")]
    WrongPhase(u64),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Store(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Listings,
    Policies,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchTask {
    pub task_id: u64,
    pub url: String,
    pub phase: Phase,
    pub attempt: u32,
    pub max_redirects: u32,
}

impl FetchTask {
    pub fn new(task_id: u64, url: impl Into<String>, phase: Phase) -> Self {
        FetchTask { task_id, url: url.into(), phase, attempt: 1, max_redirects: 10 }
    }
}

/// Tasks numbered from 0 in input order.
pub fn make_tasks<S: AsRef<str>>(urls: &[S], phase: Phase) -> Vec<FetchTask> {
    urls.iter().enumerate().map(|(i, u)| FetchTask::new(i as u64, u.as_ref(), phase)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskStatus {
    Ok,
    Dead,
    Timeout,
    RateLimited,
}

impl TaskStatus {
    pub fn is_retryable(self) -> bool {
        matches!(self, TaskStatus::Timeout | TaskStatus::RateLimited)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchResult {
    pub task_id: u64,
    pub url: String,
    pub phase: Phase,
    pub attempt: u32,
    pub final_url: String,
    pub status: TaskStatus,
    pub body: Option<Vec<u8>>,
    pub identity_used: usize,
    pub admitted_at: Nanos,
    pub finished_at: Nanos,
}

impl FetchResult {
    pub fn elapsed(&self) -> Nanos {
        self.finished_at - self.admitted_at
    }

    pub fn record(&self) -> FetchRecord {
        FetchRecord {
            task_id: self.task_id,
            url: self.url.clone(),
            phase: self.phase,
            attempt: self.attempt,
            final_url: self.final_url.clone(),
            status: self.status,
            body_len: self.body.as_ref().map_or(0, Vec::len),
            identity_used: self.identity_used,
            admitted_at: self.admitted_at,
            finished_at: self.finished_at,
        }
    }
}

/// A fetch result without its body, as kept in the ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub task_id: u64,
    pub url: String,
    pub phase: Phase,
    pub attempt: u32,
    pub final_url: String,
    pub status: TaskStatus,
    pub body_len: usize,
    pub identity_used: usize,
    pub admitted_at: Nanos,
    pub finished_at: Nanos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub identity: usize,
    pub task_id: u64,
    pub at: Nanos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub workers: usize,
    pub max_passes: u32,
    pub request_timeout: Nanos,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { workers: 4, max_passes: 3, request_timeout: 30 * SECOND }
    }
}

/// Bodies by task id. The first Ok result for a task is final; a failed
/// result may be replaced by a later attempt.
#[derive(Clone, Debug, Default)]
pub struct ResultStore {
    capacity: Option<usize>,
    results: BTreeMap<u64, FetchResult>,
}

impl ResultStore {
    pub fn new() -> Self {
        ResultStore::default()
    }

    pub fn with_capacity_limit(capacity: usize) -> Self {
        ResultStore { capacity: Some(capacity), results: BTreeMap::new() }
    }

    /// Returns whether the result was stored.
    pub fn put(&mut self, result: FetchResult) -> Result<bool, PipelineError> {
        match self.results.get(&result.task_id) {
            Some(existing) if existing.status == TaskStatus::Ok => Ok(false),
            Some(_) => {
                self.results.insert(result.task_id, result);
                Ok(true)
            }
            None => {
                if let Some(capacity) = self.capacity {
                    if self.results.len() >= capacity {
                        return Err(PipelineError::StoreFull { capacity });
                    }
                }
                self.results.insert(result.task_id, result);
                Ok(true)
            }
        }
    }

    pub fn get(&self, task_id: u64) -> Option<&FetchResult> {
        self.results.get(&task_id)
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FetchResult> {
        self.results.values()
    }
}

/// Everything that happened during a phase, across passes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    /// Latest record per task; earlier failed attempts are superseded.
    pub terminal: BTreeMap<u64, FetchRecord>,
    /// Every attempt in completion order.
    pub attempts: Vec<FetchRecord>,
    pub admissions: Vec<Admission>,
    /// Start times of the second and later passes.
    pub pass_boundaries: Vec<Nanos>,
    pub started_at: Nanos,
    pub finished_at: Nanos,
}

impl RunLedger {
    fn record(&mut self, r: &FetchResult) {
        let rec = r.record();
        let keep_old = self.terminal.get(&rec.task_id).is_some_and(|old| old.status == TaskStatus::Ok);
        if !keep_old {
            self.terminal.insert(rec.task_id, rec.clone());
        }
        self.attempts.push(rec);
    }

    pub fn status_counts(&self) -> BTreeMap<TaskStatus, usize> {
        let mut out = BTreeMap::new();
        for r in self.terminal.values() {
            *out.entry(r.status).or_default() += 1;
        }
        out
    }

    pub fn ok_count(&self) -> usize {
        self.terminal.values().filter(|r| r.status == TaskStatus::Ok).count()
    }

    /// Ok completions per hour of elapsed run time.
    pub fn hourly_throughput(&self) -> Vec<u64> {
        let elapsed = self.finished_at.saturating_sub(self.started_at);
        let hours = elapsed.div_ceil(HOUR).max(1) as usize;
        let mut series = vec![0u64; hours];
        for r in self.terminal.values().filter(|r| r.status == TaskStatus::Ok) {
            let h = ((r.finished_at.saturating_sub(self.started_at)) / HOUR) as usize;
            series[h.min(hours - 1)] += 1;
        }
        series
    }

    /// Ok completions finishing in `[from, to)`.
    pub fn ok_between(&self, from: Nanos, to: Nanos) -> usize {
        self.attempts
            .iter()
            .filter(|r| r.status == TaskStatus::Ok && r.finished_at >= from && r.finished_at < to)
            .count()
    }

    /// Terminal records as JSON lines, in task order.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), PipelineError> {
        for r in self.terminal.values() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Tasks whose terminal state is retryable, with their attempt advanced.
pub fn retry_pass(ledger: &RunLedger, tasks: &[FetchTask]) -> Vec<FetchTask> {
    tasks
        .iter()
        .filter_map(|t| {
            let rec = ledger.terminal.get(&t.task_id)?;
            rec.status.is_retryable().then(|| FetchTask { attempt: rec.attempt + 1, ..t.clone() })
        })
        .collect()
}

/// Performs one task starting at its admission time, following redirects.
fn fetch_one(
    task: &FetchTask,
    identity: &Identity,
    healthy: bool,
    transport: &dyn Transport,
    admitted_at: Nanos,
    timeout: Nanos,
) -> Result<FetchResult, PipelineError> {
    let mut url = task.url.clone();
    let mut t = admitted_at;
    let mut hops = 0;
    let status = loop {
        if !healthy {
            t += timeout;
            break TaskStatus::Timeout;
        }
        let resp = transport.get(&url, identity, task.attempt, t);
        if resp.latency > timeout {
            t += timeout;
            break TaskStatus::Timeout;
        }
        t += resp.latency;
        match resp.kind {
            ResponseKind::Ok(body) => {
                return Ok(FetchResult {
                    task_id: task.task_id,
                    url: task.url.clone(),
                    phase: task.phase,
                    attempt: task.attempt,
                    final_url: url,
                    status: TaskStatus::Ok,
                    body: Some(body),
                    identity_used: identity.id,
                    admitted_at,
                    finished_at: t,
                });
            }
            ResponseKind::Redirect(location) => {
                hops += 1;
                if hops > task.max_redirects {
                    break TaskStatus::Dead;
                }
                url = location;
            }
            ResponseKind::Dead => break TaskStatus::Dead,
            ResponseKind::Timeout => break TaskStatus::Timeout,
            ResponseKind::RateLimited => break TaskStatus::RateLimited,
            ResponseKind::Unavailable(msg) => return Err(PipelineError::TransportUnavailable(msg)),
        }
    };
    Ok(FetchResult {
        task_id: task.task_id,
        url: task.url.clone(),
        phase: task.phase,
        attempt: task.attempt,
        final_url: url,
        status,
        body: None,
        identity_used: identity.id,
        admitted_at,
        finished_at: t,
    })
}

struct PassOutput {
    results: Vec<FetchResult>,
    admissions: Vec<Admission>,
    end: Nanos,
}

fn run_pass_simulated(
    tasks: Vec<FetchTask>,
    config: &PipelineConfig,
    pool: &mut IdentityPool,
    transport: &dyn Transport,
    start: Nanos,
) -> Result<PassOutput, PipelineError> {
    let mut queue: VecDeque<FetchTask> = tasks.into();
    let mut workers: BinaryHeap<Reverse<(Nanos, usize)>> = (0..config.workers).map(|w| Reverse((start, w))).collect();
    let mut results = Vec::with_capacity(queue.len());
    let mut admissions = Vec::with_capacity(queue.len());
    let mut end = start;
    while let Some(Reverse((now, w))) = workers.pop() {
        end = end.max(now);
        let Some(task) = queue.pop_front() else { continue };
        let Some(id) = pool.next_healthy(now) else {
            let t = pool.next_recovery(now).ok_or(PipelineError::NoHealthyIdentities)?;
            queue.push_front(task);
            workers.push(Reverse((t, w)));
            continue;
        };
        let at = pool.reserve(id, now);
        admissions.push(Admission { identity: id, task_id: task.task_id, at });
        let healthy = pool.is_healthy(id, at);
        let r = fetch_one(&task, pool.identity(id)?, healthy, transport, at, config.request_timeout)?;
        workers.push(Reverse((r.finished_at, w)));
        end = end.max(r.finished_at);
        results.push(r);
    }
    Ok(PassOutput { results, admissions, end })
}

fn run_pass_threaded(
    tasks: Vec<FetchTask>,
    config: &PipelineConfig,
    pool: &mut IdentityPool,
    transport: &dyn Transport,
    origin: Instant,
) -> Result<PassOutput, PipelineError> {
    let queue = Mutex::new(VecDeque::from(tasks));
    let pool = Mutex::new(pool);
    let now = || origin.elapsed().as_nanos() as Nanos;
    let (tx, rx) = mpsc::channel::<Result<(Admission, FetchResult), PipelineError>>();
    std::thread::scope(|s| {
        for _ in 0..config.workers {
            let tx = tx.clone();
            let (queue, pool) = (&queue, &pool);
            s.spawn(move || loop {
                let Some(task) = queue.lock().expect("queue lock").pop_front() else { return };
                let picked = {
                    let mut p = pool.lock().expect("pool lock");
                    let t = now();
                    match p.next_healthy(t) {
                        Some(id) => {
                            let at = p.reserve(id, t);
                            Ok((id, at, p.identity(id).expect("known identity").clone()))
                        }
                        None => Err(p.next_recovery(t)),
                    }
                };
                let (id, at, identity) = match picked {
                    Ok(x) => x,
                    Err(Some(t)) => {
                        queue.lock().expect("queue lock").push_front(task);
                        std::thread::sleep(Duration::from_nanos(t.saturating_sub(now())));
                        continue;
                    }
                    Err(None) => {
                        let _ = tx.send(Err(PipelineError::NoHealthyIdentities));
                        return;
                    }
                };
                std::thread::sleep(Duration::from_nanos(at.saturating_sub(now())));
                let healthy = pool.lock().expect("pool lock").is_healthy(id, at);
                let started = now().max(at);
                let out = fetch_one(&task, &identity, healthy, transport, started, config.request_timeout).map(|mut r| {
                    r.finished_at = r.finished_at.min(now()).max(started);
                    (Admission { identity: id, task_id: task.task_id, at: started }, r)
                });
                let failed = out.is_err();
                let _ = tx.send(out);
                if failed {
                    return;
                }
            });
        }
    });
    drop(tx);
    let mut results = Vec::new();
    let mut admissions = Vec::new();
    for msg in rx {
        let (a, r) = msg?;
        admissions.push(a);
        results.push(r);
    }
    admissions.sort_by_key(|a| (a.at, a.task_id));
    results.sort_by_key(|r| (r.finished_at, r.task_id));
    let end = results.iter().map(|r| r.finished_at).max().unwrap_or(0).max(now());
    Ok(PassOutput { results, admissions, end })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Discrete-event time starting at the given instant.
    Simulated(Nanos),
    /// Worker threads on the wall clock.
    Wall,
}

/// Runs `tasks` to completion with up to `config.max_passes` passes and
/// returns the merged ledger.
pub fn run_phase(
    tasks: Vec<FetchTask>,
    config: &PipelineConfig,
    pool: &mut IdentityPool,
    transport: &dyn Transport,
    store: &mut ResultStore,
    clock: Clock,
) -> Result<RunLedger, PipelineError> {
    if config.workers == 0 {
        return Err(PipelineError::InvalidConfig("workers must be at least 1".into()));
    }
    if config.max_passes == 0 {
        return Err(PipelineError::InvalidConfig("max_passes must be at least 1".into()));
    }
    let mut ids = BTreeSet::new();
    for t in &tasks {
        if !ids.insert(t.task_id) {
            return Err(PipelineError::DuplicateTask(t.task_id));
        }
    }
    let origin = Instant::now();
    let start = match clock {
        Clock::Simulated(t) => t,
        Clock::Wall => 0,
    };
    let mut ledger = RunLedger { started_at: start, finished_at: start, ..Default::default() };
    let mut pending = tasks.clone();
    let mut now = start;
    for pass in 0..config.max_passes {
        if pending.is_empty() {
            break;
        }
        if pass > 0 {
            ledger.pass_boundaries.push(now);
        }
        let out = match clock {
            Clock::Simulated(_) => run_pass_simulated(pending, config, pool, transport, now)?,
            Clock::Wall => run_pass_threaded(pending, config, pool, transport, origin)?,
        };
        for r in out.results {
            ledger.record(&r);
            store.put(r)?;
        }
        ledger.admissions.extend(out.admissions);
        now = out.end;
        pending = retry_pass(&ledger, &tasks);
    }
    ledger.finished_at = now;
    Ok(ledger)
}

/// Classifies a fetched policy page and stores it under its requested URL.
pub fn classify_and_store(
    result: &FetchResult,
    detector: &DetectorModel,
    store: &mut PolicyStore,
) -> Result<PolicyDocument, PipelineError> {
    if result.phase != Phase::Policies {
        return Err(PipelineError::WrongPhase(result.task_id));
    }
    let at_ms = result.finished_at / 1_000_000;
    let doc = match (&result.status, &result.body) {
        (TaskStatus::Ok, Some(body)) => {
            let class = if classify_page(detector, body).is_policy { PageClass::AccessiblePolicy } else { PageClass::Extraneous };
            PolicyDocument::fetched(&result.url, &result.final_url, body.clone(), class, at_ms)
        }
        (TaskStatus::Dead, _) | (TaskStatus::Ok, None) => PolicyDocument::failed(&result.url, FetchStatus::Dead, at_ms),
        (TaskStatus::Timeout | TaskStatus::RateLimited, _) => PolicyDocument::failed(&result.url, FetchStatus::Timeout, at_ms),
    };
    store.insert(doc.clone());
    Ok(doc)
}

/// App records parsed from Ok listing bodies, plus the URLs whose bodies did
/// not parse.
pub fn collect_listings(store: &ResultStore) -> (Vec<AppRecord>, Vec<(String, String)>) {
    let mut apps = Vec::new();
    let mut bad = Vec::new();
    for r in store.iter().filter(|r| r.phase == Phase::Listings && r.status == TaskStatus::Ok) {
        let body = r.body.as_deref().unwrap_or_default();
        match std::str::from_utf8(body).map_err(|e| e.to_string()).and_then(AppRecord::from_json) {
            Ok(app) => apps.push(app),
            Err(e) => bad.push((r.url.clone(), e)),
        }
    }
    (apps, bad)
}
