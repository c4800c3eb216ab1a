//! Multi-worker execution over a shared-filesystem queue.

mod metrics;
mod queue;
mod worker;

pub use metrics::{export_metrics, parse_metric, serve_metrics, MeteredEngine, Metrics, WorkerStatus, SERIES};
pub use queue::{
    Completion, DoneEntry, Lease, Queue, QueueCounts, QueueError, QueueState, QueueTask, DEFAULT_MAX_ATTEMPTS,
};
pub use worker::{
    worker_loop, ClientFactory, ExecOutcome, ForgeExecutor, NoopExecutor, TaskExecutor, WorkerConfig,
    WorkerSummary, DEFAULT_LEASE_TTL_MS,
};
