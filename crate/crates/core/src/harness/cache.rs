use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::fsutil::{now_millis, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCacheEntry {
    pub task_id: String,
    pub dockerfile_hash: String,
    pub image_tag: String,
    pub built_at: u64,
    pub last_used: u64,
    #[serde(default)]
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CacheState {
    entries: Vec<ImageCacheEntry>,
    /// task id → pin expiry in epoch milliseconds.
    pins: BTreeMap<String, u64>,
}

/// Built images keyed by (task, Dockerfile hash).
///
/// An in-memory cache serves one process. A file-backed cache is shared by
/// every worker on a host: each operation takes an exclusive lock on the
/// file and rewrites it atomically, so pins set by one worker protect its
/// images from another worker's pruning.
#[derive(Debug)]
pub struct ImageCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
    hits: AtomicU64,
}

impl Default for ImageCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl ImageCache {
    pub fn in_memory() -> Self {
        Self { path: None, state: Mutex::new(CacheState::default()), hits: AtomicU64::new(0) }
    }

    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self { path: Some(path), state: Mutex::new(CacheState::default()), hits: AtomicU64::new(0) })
    }

    /// Builds this process avoided by reusing an image.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub(crate) fn record_hit(&self) {
        self.hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn with_state<R>(&self, f: impl FnOnce(&mut CacheState) -> R) -> R {
        let mut guard = self.state.lock().expect("cache lock");
        let Some(path) = &self.path else {
            return f(&mut guard);
        };
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path.with_extension("lock"))
            .and_then(|l| l.lock().map(|_| l));
        let mut state: CacheState = std::fs::read(path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        let out = f(&mut state);
        if let Err(e) = write_atomic(path, &serde_json::to_vec_pretty(&state).expect("cache state")) {
            tracing::warn!(error = %e, "could not persist image cache");
        }
        drop(lock);
        *guard = state;
        out
    }

    /// Tag of the cached image for this Dockerfile, refreshing `last_used`.
    pub fn lookup(&self, task_id: &str, dockerfile_hash: &str) -> Option<String> {
        self.with_state(|s| {
            let e = s
                .entries
                .iter_mut()
                .find(|e| e.task_id == task_id && e.dockerfile_hash == dockerfile_hash)?;
            e.last_used = now_millis();
            Some(e.image_tag.clone())
        })
    }

    pub fn insert(&self, task_id: &str, dockerfile_hash: &str, image_tag: &str) {
        let now = now_millis();
        self.with_state(|s| {
            s.entries.retain(|e| !(e.task_id == task_id && e.dockerfile_hash == dockerfile_hash));
            s.entries.push(ImageCacheEntry {
                task_id: task_id.into(),
                dockerfile_hash: dockerfile_hash.into(),
                image_tag: image_tag.into(),
                built_at: now,
                last_used: now,
                accepted: false,
            });
        })
    }

    pub fn mark_accepted(&self, image_tag: &str) {
        self.with_state(|s| s.entries.iter_mut().filter(|e| e.image_tag == image_tag).for_each(|e| e.accepted = true))
    }

    pub fn entries(&self) -> Vec<ImageCacheEntry> {
        self.with_state(|s| s.entries.clone())
    }

    pub fn entry_for_tag(&self, image_tag: &str) -> Option<ImageCacheEntry> {
        self.with_state(|s| s.entries.iter().find(|e| e.image_tag == image_tag).cloned())
    }

    /// Drops every entry that refers to `image_tag`.
    pub fn evict_tag(&self, image_tag: &str) {
        self.with_state(|s| s.entries.retain(|e| e.image_tag != image_tag))
    }

    /// Protects a task's images from pruning until `ttl_ms` from now.
    pub fn pin(&self, task_id: &str, ttl_ms: u64) {
        let until = now_millis().saturating_add(ttl_ms);
        self.with_state(|s| {
            s.pins.insert(task_id.to_string(), until);
        })
    }

    pub fn unpin(&self, task_id: &str) {
        self.with_state(|s| {
            s.pins.remove(task_id);
        })
    }

    pub fn is_pinned(&self, task_id: &str) -> bool {
        let now = now_millis();
        self.with_state(|s| s.pins.get(task_id).is_some_and(|&until| until > now))
    }
}
