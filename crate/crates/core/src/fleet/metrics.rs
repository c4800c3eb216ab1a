use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fsutil::{now_millis, write_atomic};
use crate::harness::{
    BuildOutcome, ContainerEngine, ContainerInfo, EngineError, ImageInfo, RunOutcome, RunRequest,
};

/// Exported series, in output order, with their kind.
pub const SERIES: [(&str, &str); 8] = [
    ("tasks_done", "counter"),
    ("tasks_parked", "counter"),
    ("tasks_retried", "counter"),
    ("stale_leases", "counter"),
    ("builds_total", "counter"),
    ("cache_hits", "counter"),
    ("active_containers", "gauge"),
    ("reclaim_bytes", "counter"),
];

/// Live counters of one worker.
#[derive(Debug, Default)]
pub struct Metrics {
    values: [AtomicU64; SERIES.len()],
    active_task: Mutex<Option<String>>,
    heartbeat_at: AtomicU64,
}

fn index(name: &str) -> usize {
    SERIES.iter().position(|(n, _)| *n == name).unwrap_or_else(|| panic!("unknown metric {name}"))
}

impl Metrics {
    pub fn add(&self, name: &str, delta: u64) {
        self.values[index(name)].fetch_add(delta, Ordering::Relaxed);
    }

    pub fn sub(&self, name: &str, delta: u64) {
        self.values[index(name)].fetch_sub(delta, Ordering::Relaxed);
    }

    pub fn set(&self, name: &str, value: u64) {
        self.values[index(name)].store(value, Ordering::Relaxed);
    }

    pub fn get(&self, name: &str) -> u64 {
        self.values[index(name)].load(Ordering::Relaxed)
    }

    pub fn set_active_task(&self, task: Option<&str>) {
        *self.active_task.lock().expect("metrics lock") = task.map(str::to_string);
    }

    /// Advances the heartbeat; it never moves backwards.
    pub fn beat(&self) -> u64 {
        let now = now_millis();
        self.heartbeat_at.fetch_max(now, Ordering::Relaxed).max(now)
    }

    pub fn status(&self, worker_id: &str) -> WorkerStatus {
        WorkerStatus {
            worker_id: worker_id.to_string(),
            heartbeat_at: self.heartbeat_at.load(Ordering::Relaxed),
            active_task: self.active_task.lock().expect("metrics lock").clone(),
            counters: SERIES.iter().map(|(n, _)| (n.to_string(), self.get(n))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerStatus {
    pub worker_id: String,
    pub heartbeat_at: u64,
    pub active_task: Option<String>,
    pub counters: BTreeMap<String, u64>,
}

impl WorkerStatus {
    pub fn write(&self, workers_dir: &Path) -> std::io::Result<()> {
        write_atomic(
            &workers_dir.join(format!("{}.json", self.worker_id)),
            &serde_json::to_vec_pretty(self).expect("status serializes"),
        )
    }

    pub fn read_all(workers_dir: &Path) -> std::io::Result<Vec<WorkerStatus>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(workers_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(s) = std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()) {
                    out.push(s);
                }
            }
        }
        out.sort_by(|a: &WorkerStatus, b| a.worker_id.cmp(&b.worker_id));
        Ok(out)
    }
}

fn escape_label(v: &str) -> String {
    v.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

/// Plain-text exposition of a worker's counters.
pub fn export_metrics(status: &WorkerStatus) -> String {
    let worker = escape_label(&status.worker_id);
    let mut out = String::new();
    for (name, kind) in SERIES {
        let value = status.counters.get(name).copied().unwrap_or(0);
        out.push_str(&format!("# TYPE {name} {kind}\n{name}{{worker=\"{worker}\"}} {value}\n"));
    }
    out.push_str(&format!(
        "# TYPE heartbeat_timestamp_ms gauge\nheartbeat_timestamp_ms{{worker=\"{worker}\"}} {}\n",
        status.heartbeat_at
    ));
    out
}

/// Reads one series back out of an exposition document.
pub fn parse_metric(text: &str, name: &str) -> Option<u64> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .find(|l| l.split(['{', ' ']).next() == Some(name))
        .and_then(|l| l.rsplit(' ').next())
        .and_then(|v| v.parse().ok())
}

/// Serves `GET /metrics` until `shutdown` is set.
pub fn serve_metrics(
    addr: SocketAddr,
    worker_id: String,
    metrics: Arc<Metrics>,
    shutdown: Arc<AtomicBool>,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("metrics server is not bound to an IP address"))?;
    let handle = std::thread::spawn(move || {
        while !shutdown.load(Ordering::Relaxed) {
            let request = match server.recv_timeout(Duration::from_millis(200)) {
                Ok(Some(r)) => r,
                Ok(None) => continue,
                Err(_) => break,
            };
            let path = request.url().split('?').next().unwrap_or("");
            let response = if *request.method() == tiny_http::Method::Get && path == "/metrics" {
                let header = tiny_http::Header::from_bytes("Content-Type", "text/plain; version=0.0.4")
                    .expect("static header");
                tiny_http::Response::from_string(export_metrics(&metrics.status(&worker_id))).with_header(header)
            } else {
                tiny_http::Response::from_string("not found\n").with_status_code(404)
            };
            let _ = request.respond(response);
        }
    });
    Ok((bound, handle))
}

/// Engine wrapper that feeds `builds_total` and `active_containers`.
pub struct MeteredEngine<E> {
    inner: E,
    metrics: Arc<Metrics>,
}

impl<E: ContainerEngine> MeteredEngine<E> {
    pub fn new(inner: E, metrics: Arc<Metrics>) -> Self {
        Self { inner, metrics }
    }
}

impl<E: ContainerEngine> ContainerEngine for MeteredEngine<E> {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        self.metrics.add("builds_total", 1);
        self.inner.build(ctx, tag)
    }

    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        self.metrics.add("active_containers", 1);
        let out = self.inner.run(req);
        self.metrics.sub("active_containers", 1);
        out
    }

    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        self.inner.images()
    }

    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        self.inner.remove_image(tag)
    }

    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        self.inner.containers()
    }

    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        self.inner.remove_container(id)
    }

    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        self.inner.push(tag, registry)
    }
}
