//! File-based task queue on a shared filesystem.
//!
//! Layout under the queue root:
//!
//! ```text
//! pending/<id>.json   waiting tasks
//! leased/<id>.json    claimed tasks, with a leased/<id>.lease sidecar
//! done/<id>.json      results
//! parked/<id>.json    tasks that hit the attempt cap
//! tmp/                staging for atomic writes
//! workers/<w>.json    worker heartbeats
//! ```
//!
//! Ownership changes only through `rename` within one filesystem, and new
//! files appear only through a hard link from `tmp/`, which fails when the
//! target exists. Readers never see a partial file.

use std::fs;
use std::io;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::{now_millis, write_atomic};
use crate::ingest::TaskCandidate;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
const STATES: [&str; 4] = ["pending", "leased", "done", "parked"];

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("lease on {0} is no longer held")]
    StaleLease(String),
    #[error("invalid task id {0:?}")]
    InvalidId(String),
    #[error("queue directories are not on one filesystem: {0}")]
    CrossDevice(String),
    #[error("corrupt queue file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueState {
    Pending,
    Leased,
    Done,
    Parked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueTask {
    pub task_id: String,
    pub payload: TaskCandidate,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub enqueued_at: u64,
}

impl QueueTask {
    pub fn new(payload: TaskCandidate) -> Self {
        Self { task_id: payload.task_id(), payload, attempts: 0, enqueued_at: now_millis() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub task_id: String,
    pub worker_id: String,
    /// Distinguishes this claim from later claims of the same task.
    pub token: String,
    pub acquired_at: u64,
    pub renewed_at: u64,
    pub ttl_ms: u64,
}

impl Lease {
    pub fn expires_at(&self) -> u64 {
        self.renewed_at.saturating_add(self.ttl_ms)
    }

    pub fn is_live(&self, now: u64) -> bool {
        now < self.expires_at()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoneEntry {
    pub task: QueueTask,
    pub worker_id: String,
    pub completed_at: u64,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounts {
    pub pending: usize,
    pub leased: usize,
    pub done: usize,
    pub parked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Recorded,
    /// Another execution already recorded a result.
    AlreadyDone,
}

static SEQ: AtomicU64 = AtomicU64::new(0);

fn unique() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("{}-{nanos}-{}", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed))
}

fn check_id(id: &str) -> Result<(), QueueError> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\', '\0']) {
        return Err(QueueError::InvalidId(id.to_string()));
    }
    Ok(())
}

fn is_missing(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::NotFound
}

#[derive(Debug, Clone)]
pub struct Queue {
    root: PathBuf,
    pub max_attempts: u32,
}

impl Queue {
    /// Creates the layout if needed and checks that renames between the
    /// queue directories work.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, QueueError> {
        let root = root.into();
        for dir in STATES.iter().chain(&["tmp", "workers"]) {
            fs::create_dir_all(root.join(dir))?;
        }
        let probe = root.join("tmp").join(format!(".probe-{}", unique()));
        fs::write(&probe, b"probe")?;
        let target = root.join("pending").join(probe.file_name().expect("probe name"));
        match fs::rename(&probe, &target) {
            Ok(()) => fs::remove_file(&target)?,
            Err(e) => {
                let _ = fs::remove_file(&probe);
                return Err(QueueError::CrossDevice(e.to_string()));
            }
        }
        Ok(Self { root, max_attempts: DEFAULT_MAX_ATTEMPTS })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, state: QueueState, id: &str) -> PathBuf {
        let dir = match state {
            QueueState::Pending => "pending",
            QueueState::Leased => "leased",
            QueueState::Done => "done",
            QueueState::Parked => "parked",
        };
        self.root.join(dir).join(format!("{id}.json"))
    }

    fn lease_path(&self, id: &str) -> PathBuf {
        self.root.join("leased").join(format!("{id}.lease"))
    }

    fn tmp(&self, label: &str) -> PathBuf {
        self.root.join("tmp").join(format!("{label}.{}", unique()))
    }

    /// Writes `bytes` to `dest` only if `dest` does not exist yet.
    fn publish_new(&self, dest: &Path, bytes: &[u8]) -> Result<bool, QueueError> {
        let tmp = self.tmp("new");
        write_atomic(&tmp, bytes)?;
        let linked = fs::hard_link(&tmp, dest);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, QueueError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| QueueError::Corrupt { path: path.to_path_buf(), message: e.to_string() })
    }

    fn ids(&self, state: QueueState) -> Result<Vec<String>, QueueError> {
        let dir = self.path(state, "x").parent().expect("state dir").to_path_buf();
        let mut out = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json").filter(|_| !name.starts_with('.')) {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn state_of(&self, task_id: &str) -> Option<QueueState> {
        [QueueState::Pending, QueueState::Leased, QueueState::Done, QueueState::Parked]
            .into_iter()
            .find(|s| self.path(*s, task_id).exists())
    }

    /// Adds tasks to `pending/`, skipping ids the queue already knows in any
    /// state. Returns how many were added.
    pub fn enqueue(&self, tasks: &[QueueTask]) -> Result<usize, QueueError> {
        let mut added = 0;
        for task in tasks {
            check_id(&task.task_id)?;
            if self.state_of(&task.task_id).is_some() {
                continue;
            }
            let bytes = serde_json::to_vec_pretty(task).expect("task serializes");
            if self.publish_new(&self.path(QueueState::Pending, &task.task_id), &bytes)? {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Claims one pending task. Losing a rename race moves on to the next
    /// candidate; `None` means nothing was claimable.
    pub fn claim(&self, worker_id: &str, ttl_ms: u64) -> Result<Option<(QueueTask, Lease)>, QueueError> {
        let ids = self.ids(QueueState::Pending)?;
        if ids.is_empty() {
            return Ok(None);
        }
        // Start at a worker-specific offset so workers rarely collide.
        let offset = worker_id.bytes().fold(0usize, |h, b| h.wrapping_mul(31).wrapping_add(b as usize)) % ids.len();
        for id in ids[offset..].iter().chain(&ids[..offset]) {
            let leased = self.path(QueueState::Leased, id);
            match fs::rename(self.path(QueueState::Pending, id), &leased) {
                Ok(()) => {}
                Err(e) if is_missing(&e) => continue,
                Err(e) => return Err(e.into()),
            }
            let now = now_millis();
            let lease = Lease {
                task_id: id.clone(),
                worker_id: worker_id.to_string(),
                token: format!("{worker_id}-{}", unique()),
                acquired_at: now,
                renewed_at: now,
                ttl_ms,
            };
            write_atomic(&self.lease_path(id), &serde_json::to_vec_pretty(&lease).expect("lease"))?;
            match Self::read_json::<QueueTask>(&leased) {
                Ok(task) => return Ok(Some((task, lease))),
                Err(QueueError::Corrupt { .. }) => {
                    tracing::warn!(task = %id, "unreadable task file; parking it");
                    let _ = fs::rename(&leased, self.path(QueueState::Parked, id));
                    let _ = fs::remove_file(self.lease_path(id));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    /// The current lease of a claimed task. A leased task whose sidecar is
    /// missing (claimer died mid-claim) counts as leased at its rename time.
    pub fn lease_of(&self, task_id: &str) -> Option<Lease> {
        if let Ok(l) = Self::read_json::<Lease>(&self.lease_path(task_id)) {
            return Some(l);
        }
        let meta = fs::metadata(self.path(QueueState::Leased, task_id)).ok()?;
        let changed = (meta.ctime().max(0) as u64) * 1000;
        Some(Lease {
            task_id: task_id.to_string(),
            worker_id: String::new(),
            token: String::new(),
            acquired_at: changed,
            renewed_at: changed,
            ttl_ms: 0,
        })
    }

    fn held(&self, lease: &Lease, now: u64) -> Result<Lease, QueueError> {
        let stale = || QueueError::StaleLease(lease.task_id.clone());
        let current: Lease = Self::read_json(&self.lease_path(&lease.task_id)).map_err(|_| stale())?;
        if current.token != lease.token || !current.is_live(now) || !self.path(QueueState::Leased, &lease.task_id).exists()
        {
            return Err(stale());
        }
        Ok(current)
    }

    /// Extends a held lease.
    pub fn renew(&self, lease: &Lease) -> Result<Lease, QueueError> {
        let now = now_millis();
        let mut current = self.held(lease, now)?;
        current.renewed_at = now;
        write_atomic(&self.lease_path(&lease.task_id), &serde_json::to_vec_pretty(&current).expect("lease"))?;
        if !self.path(QueueState::Leased, &lease.task_id).exists() {
            let _ = fs::remove_file(self.lease_path(&lease.task_id));
            return Err(QueueError::StaleLease(lease.task_id.clone()));
        }
        Ok(current)
    }

    fn drop_lease_if_ours(&self, lease: &Lease) {
        if Self::read_json::<Lease>(&self.lease_path(&lease.task_id)).is_ok_and(|l| l.token == lease.token) {
            let _ = fs::remove_file(self.path(QueueState::Leased, &lease.task_id));
            let _ = fs::remove_file(self.lease_path(&lease.task_id));
        }
    }

    /// Records the result of a leased task. Completing an already done task
    /// is a no-op, so only the first result is ever visible.
    pub fn complete<R: Serialize>(&self, lease: &Lease, result: &R) -> Result<Completion, QueueError> {
        let done = self.path(QueueState::Done, &lease.task_id);
        if done.exists() {
            self.drop_lease_if_ours(lease);
            return Ok(Completion::AlreadyDone);
        }
        self.held(lease, now_millis())?;
        let task: QueueTask = Self::read_json(&self.path(QueueState::Leased, &lease.task_id))?;
        let entry = DoneEntry {
            task,
            worker_id: lease.worker_id.clone(),
            completed_at: now_millis(),
            result: serde_json::to_value(result).map_err(io::Error::other)?,
        };
        let recorded = self.publish_new(&done, &serde_json::to_vec_pretty(&entry).expect("entry"))?;
        self.drop_lease_if_ours(lease);
        Ok(if recorded { Completion::Recorded } else { Completion::AlreadyDone })
    }

    /// Gives a held task back for another attempt, parking it at the cap.
    pub fn release_for_retry(&self, lease: &Lease) -> Result<QueueState, QueueError> {
        self.held(lease, now_millis())?;
        self.requeue(&lease.task_id).map(|s| s.unwrap_or(QueueState::Pending))
    }

    /// Moves a leased task back to pending (or parked at the cap) with one
    /// more attempt. Staged through `tmp/` so a crash never loses the task:
    /// the updated copy is written first, then the leased file is claimed
    /// by rename, then the copy is published.
    fn requeue(&self, id: &str) -> Result<Option<QueueState>, QueueError> {
        let leased = self.path(QueueState::Leased, id);
        let mut task: QueueTask = match Self::read_json(&leased) {
            Ok(t) => t,
            Err(QueueError::Io(e)) if is_missing(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        task.attempts += 1;
        let tag = unique();
        let next = self.root.join("tmp").join(format!("{id}.next-{tag}"));
        let claimed = self.root.join("tmp").join(format!("{id}.reap-{tag}"));
        write_atomic(&next, &serde_json::to_vec_pretty(&task).expect("task"))?;
        match fs::rename(&leased, &claimed) {
            Ok(()) => {}
            Err(e) if is_missing(&e) => {
                let _ = fs::remove_file(&next);
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        }
        let _ = fs::remove_file(self.lease_path(id));
        let state = self.publish_staged(id, &next, task.attempts)?;
        let _ = fs::remove_file(&claimed);
        Ok(Some(state))
    }

    fn publish_staged(&self, id: &str, next: &Path, attempts: u32) -> Result<QueueState, QueueError> {
        let state = if attempts >= self.max_attempts { QueueState::Parked } else { QueueState::Pending };
        fs::rename(next, self.path(state, id))?;
        Ok(state)
    }

    /// Finishes requeues interrupted by a crash.
    fn recover_staged(&self) -> Result<(), QueueError> {
        let tmp = self.root.join("tmp");
        let names: Vec<String> = fs::read_dir(&tmp)?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect();
        let now = std::time::SystemTime::now();
        let old = |p: &Path| {
            fs::metadata(p)
                .and_then(|m| m.modified())
                .ok()
                .and_then(|m| now.duration_since(m).ok())
                .is_some_and(|age| age.as_secs() >= 60)
        };
        for name in &names {
            let path = tmp.join(name);
            if let Some((id, tag)) = name.split_once(".next-") {
                if !old(&path) {
                    continue;
                }
                let claimed = tmp.join(format!("{id}.reap-{tag}"));
                if claimed.exists() {
                    let task: QueueTask = Self::read_json(&path)?;
                    self.publish_staged(id, &path, task.attempts)?;
                    let _ = fs::remove_file(&claimed);
                } else {
                    let _ = fs::remove_file(&path);
                }
            } else if let Some((id, tag)) = name.split_once(".reap-") {
                if old(&path) && !tmp.join(format!("{id}.next-{tag}")).exists() {
                    let _ = fs::remove_file(&path);
                }
            } else if old(&path) {
                let _ = fs::remove_file(&path);
            }
        }
        Ok(())
    }

    /// Returns expired leased tasks to pending (or parked at the cap).
    /// Leased entries whose result is already recorded are cleaned up.
    pub fn reap_expired(&self, now: u64) -> Result<Vec<String>, QueueError> {
        self.recover_staged()?;
        let mut reclaimed = Vec::new();
        for id in self.ids(QueueState::Leased)? {
            if self.path(QueueState::Done, &id).exists() {
                let _ = fs::remove_file(self.path(QueueState::Leased, &id));
                let _ = fs::remove_file(self.lease_path(&id));
                continue;
            }
            let Some(lease) = self.lease_of(&id) else { continue };
            let ttl = if lease.ttl_ms == 0 { crate::fleet::DEFAULT_LEASE_TTL_MS } else { lease.ttl_ms };
            if now < lease.renewed_at.saturating_add(ttl) {
                continue;
            }
            if self.requeue(&id)?.is_some() {
                reclaimed.push(id);
            }
        }
        // Sidecars whose task is gone.
        for entry in fs::read_dir(self.root.join("leased"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".lease") {
                if !self.path(QueueState::Leased, id).exists() {
                    let _ = fs::remove_file(self.lease_path(id));
                }
            }
        }
        Ok(reclaimed)
    }

    pub fn counts(&self) -> Result<QueueCounts, QueueError> {
        Ok(QueueCounts {
            pending: self.ids(QueueState::Pending)?.len(),
            leased: self.ids(QueueState::Leased)?.len(),
            done: self.ids(QueueState::Done)?.len(),
            parked: self.ids(QueueState::Parked)?.len(),
        })
    }

    pub fn task_ids(&self, state: QueueState) -> Result<Vec<String>, QueueError> {
        self.ids(state)
    }

    pub fn done_entry(&self, task_id: &str) -> Result<DoneEntry, QueueError> {
        Self::read_json(&self.path(QueueState::Done, task_id))
    }

    pub fn task(&self, state: QueueState, task_id: &str) -> Result<QueueTask, QueueError> {
        if state == QueueState::Done {
            return self.done_entry(task_id).map(|d| d.task);
        }
        Self::read_json(&self.path(state, task_id))
    }

    /// Live leases, at most one per task by construction.
    pub fn live_leases(&self, now: u64) -> Result<Vec<Lease>, QueueError> {
        Ok(self
            .ids(QueueState::Leased)?
            .iter()
            .filter_map(|id| self.lease_of(id))
            .filter(|l| l.ttl_ms == 0 || l.is_live(now))
            .collect())
    }

    pub(crate) fn workers_dir(&self) -> PathBuf {
        self.root.join("workers")
    }
}
