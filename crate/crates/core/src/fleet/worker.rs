use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::metrics::{serve_metrics, MeteredEngine, Metrics};
use super::queue::{Completion, Lease, Queue, QueueError, QueueState, QueueTask};
use crate::fsutil::now_millis;
use crate::harness::{prune_resources, ContainerEngine, ImageCache, PrunePolicy};
use crate::modelio::{AuditLog, ModelClient};
use crate::orchestrator::{run_task_loop, LoopConfig, LoopDeps, TaskStatus, TaskStore};
use crate::synthesis::RepoCache;

pub const DEFAULT_LEASE_TTL_MS: u64 = 90 * 60 * 1000;

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub lease_ttl: Duration,
    pub poll_interval: Duration,
    /// How often the worker prunes engine resources.
    pub prune_interval: Duration,
    /// How often the worker returns expired leases of other workers.
    pub reap_interval: Duration,
    /// Stop after this many tasks.
    pub max_tasks: Option<usize>,
    /// Stop once nothing is pending or leased.
    pub exit_when_drained: bool,
    pub metrics_addr: Option<SocketAddr>,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            lease_ttl: Duration::from_millis(DEFAULT_LEASE_TTL_MS),
            poll_interval: Duration::from_secs(5),
            prune_interval: Duration::from_secs(600),
            reap_interval: Duration::from_secs(60),
            max_tasks: None,
            exit_when_drained: false,
            metrics_addr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutcome {
    Done(serde_json::Value),
    /// Infrastructure trouble; the task goes back to the queue.
    Retry(String),
}

pub trait TaskExecutor: Send + Sync {
    fn execute(&self, task: &QueueTask) -> ExecOutcome;

    /// Periodic housekeeping. Returns bytes reclaimed.
    fn maintain(&self) -> u64 {
        0
    }
}

/// Sleeps, then reports the task id. Used to exercise the queue.
#[derive(Debug, Clone, Default)]
pub struct NoopExecutor {
    pub delay: Duration,
}

impl TaskExecutor for NoopExecutor {
    fn execute(&self, task: &QueueTask) -> ExecOutcome {
        std::thread::sleep(self.delay);
        ExecOutcome::Done(serde_json::json!({ "task_id": task.task_id, "pid": std::process::id() }))
    }
}

pub type ClientFactory = Box<dyn Fn(&QueueTask) -> Result<Box<dyn ModelClient>, String> + Send + Sync>;

/// Runs the synthesis loop for each task.
pub struct ForgeExecutor {
    pub clients: ClientFactory,
    pub engine: MeteredEngine<Box<dyn ContainerEngine>>,
    pub images: ImageCache,
    pub repos: RepoCache,
    pub config: LoopConfig,
    pub store: TaskStore,
    pub prune: PrunePolicy,
    pub metrics: Arc<Metrics>,
}

impl TaskExecutor for ForgeExecutor {
    fn execute(&self, task: &QueueTask) -> ExecOutcome {
        let client = match (self.clients)(task) {
            Ok(c) => c,
            Err(e) => return ExecOutcome::Retry(format!("no model client: {e}")),
        };
        let mut audit = AuditLog::to_file(self.store.audit_path(&task.task_id));
        let deps = LoopDeps { client: client.as_ref(), engine: &self.engine, images: &self.images, repos: &self.repos };
        let record = run_task_loop(&task.payload, &deps, &self.config, &mut audit);
        self.metrics.set("cache_hits", self.images.hits());
        if let Err(e) = self.store.save(&record) {
            return ExecOutcome::Retry(format!("could not store artifacts: {e}"));
        }
        if record.final_status == TaskStatus::Infra {
            return ExecOutcome::Retry(record.note.clone().unwrap_or_else(|| "infrastructure failure".into()));
        }
        ExecOutcome::Done(serde_json::to_value(&record).expect("record serializes"))
    }

    fn maintain(&self) -> u64 {
        let report = prune_resources(&self.engine, &self.images, &self.prune);
        for e in &report.errors {
            warn!(error = %e, "prune");
        }
        report.bytes_reclaimed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub claimed: usize,
    pub completed: usize,
    pub duplicates: usize,
    pub retried: usize,
    pub parked: usize,
    pub stale: usize,
}

fn sleep_unless(shutdown: &AtomicBool, total: Duration) {
    let end = Instant::now() + total;
    while !shutdown.load(Ordering::Relaxed) {
        let left = end.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        std::thread::sleep(left.min(Duration::from_millis(50)));
    }
}

/// Runs `executor` while renewing `lease` every third of its ttl. Returns
/// the outcome and whether the lease was lost on the way.
fn execute_leased(queue: &Queue, lease: &Lease, task: &QueueTask, executor: &dyn TaskExecutor) -> (ExecOutcome, bool) {
    let every = Duration::from_millis((lease.ttl_ms / 3).max(1));
    let (stop, stopped) = mpsc::channel::<()>();
    std::thread::scope(|s| {
        let renewer = s.spawn(move || {
            while let Err(mpsc::RecvTimeoutError::Timeout) = stopped.recv_timeout(every) {
                if let Err(e) = queue.renew(lease) {
                    warn!(task = %lease.task_id, error = %e, "lease lost");
                    return true;
                }
            }
            false
        });
        let outcome = catch_unwind(AssertUnwindSafe(|| executor.execute(task)))
            .unwrap_or_else(|_| ExecOutcome::Retry("executor panicked".into()));
        drop(stop);
        (outcome, renewer.join().unwrap_or(true))
    })
}

/// Claims and runs tasks until `shutdown` is set (or the configured stop
/// condition holds). On shutdown the current task is finished, then the
/// final status is written.
pub fn worker_loop(
    queue: &Queue,
    worker_id: &str,
    config: &WorkerConfig,
    executor: &dyn TaskExecutor,
    metrics: Arc<Metrics>,
    shutdown: Arc<AtomicBool>,
) -> Result<WorkerSummary, QueueError> {
    let server_stop = Arc::new(AtomicBool::new(false));
    let server = match config.metrics_addr {
        Some(addr) => {
            let (bound, handle) = serve_metrics(addr, worker_id.to_string(), metrics.clone(), server_stop.clone())?;
            info!(worker = worker_id, %bound, "serving metrics");
            Some(handle)
        }
        None => None,
    };
    let publish = |m: &Metrics| {
        m.beat();
        if let Err(e) = m.status(worker_id).write(&queue.workers_dir()) {
            warn!(error = %e, "could not write worker status");
        }
    };

    let mut summary = WorkerSummary::default();
    let ttl_ms = config.lease_ttl.as_millis() as u64;
    let mut last_prune = Instant::now();
    let mut last_reap: Option<Instant> = None;
    let result = loop {
        publish(&metrics);
        if shutdown.load(Ordering::Relaxed) || config.max_tasks.is_some_and(|m| summary.claimed >= m) {
            break Ok(summary);
        }
        if last_prune.elapsed() >= config.prune_interval {
            metrics.add("reclaim_bytes", executor.maintain());
            last_prune = Instant::now();
        }
        if last_reap.is_none_or(|t| t.elapsed() >= config.reap_interval) {
            let reclaimed = queue.reap_expired(now_millis())?;
            if !reclaimed.is_empty() {
                info!(worker = worker_id, count = reclaimed.len(), "reclaimed expired leases");
            }
            last_reap = Some(Instant::now());
        }

        let Some((task, lease)) = queue.claim(worker_id, ttl_ms)? else {
            if config.exit_when_drained {
                let c = queue.counts()?;
                if c.pending == 0 && c.leased == 0 {
                    break Ok(summary);
                }
            }
            sleep_unless(&shutdown, config.poll_interval);
            continue;
        };
        summary.claimed += 1;
        metrics.set_active_task(Some(&task.task_id));
        publish(&metrics);
        info!(worker = worker_id, task = %task.task_id, attempt = task.attempts + 1, "claimed");

        let (outcome, lost) = execute_leased(queue, &lease, &task, executor);
        let settled = match outcome {
            ExecOutcome::Done(result) => queue.complete(&lease, &result).map(|c| {
                match c {
                    Completion::Recorded => {
                        summary.completed += 1;
                        metrics.add("tasks_done", 1);
                    }
                    Completion::AlreadyDone => summary.duplicates += 1,
                }
            }),
            ExecOutcome::Retry(reason) => {
                warn!(worker = worker_id, task = %task.task_id, %reason, "returning task to the queue");
                queue.release_for_retry(&lease).map(|state| {
                    if state == QueueState::Parked {
                        summary.parked += 1;
                        metrics.add("tasks_parked", 1);
                    } else {
                        summary.retried += 1;
                        metrics.add("tasks_retried", 1);
                    }
                })
            }
        };
        match settled {
            Ok(()) => {}
            Err(QueueError::StaleLease(id)) => {
                warn!(worker = worker_id, task = %id, lost, "lease expired before completion; result discarded");
                summary.stale += 1;
                metrics.add("stale_leases", 1);
            }
            Err(e) => break Err(e),
        }
        metrics.set_active_task(None);
    };

    metrics.set_active_task(None);
    publish(&metrics);
    server_stop.store(true, Ordering::Relaxed);
    if let Some(h) = server {
        let _ = h.join();
    }
    result
}
