use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::ImageCache;
use super::engine::ContainerEngine;
use crate::fsutil::now_millis;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunePolicy {
    pub min_idle_age: Duration,
    pub keep_accepted: bool,
}

impl Default for PrunePolicy {
    fn default() -> Self {
        Self { min_idle_age: Duration::from_secs(3600), keep_accepted: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReclaimReport {
    pub containers_removed: usize,
    pub images_removed: usize,
    pub images_kept: usize,
    pub bytes_reclaimed: u64,
    pub errors: Vec<String>,
}

/// Removes exited containers and idle task images. Images of pinned tasks
/// and, with `keep_accepted`, accepted images are kept. Engine errors are
/// collected and pruning carries on.
pub fn prune_resources(engine: &dyn ContainerEngine, cache: &ImageCache, policy: &PrunePolicy) -> ReclaimReport {
    let mut report = ReclaimReport::default();
    match engine.containers() {
        Ok(list) => {
            for c in list.into_iter().filter(|c| !c.running) {
                match engine.remove_container(&c.id) {
                    Ok(bytes) => {
                        report.containers_removed += 1;
                        report.bytes_reclaimed += bytes;
                    }
                    Err(e) => report.errors.push(format!("container {}: {e}", c.id)),
                }
            }
        }
        Err(e) => report.errors.push(format!("listing containers: {e}")),
    }

    let images = match engine.images() {
        Ok(i) => i,
        Err(e) => {
            report.errors.push(format!("listing images: {e}"));
            return report;
        }
    };
    let now = now_millis();
    let min_idle = policy.min_idle_age.as_millis() as u64;
    for image in images.into_iter().filter(|i| i.tag.starts_with("openswe/task-")) {
        let entry = cache.entry_for_tag(&image.tag);
        let keep = match &entry {
            Some(e) if cache.is_pinned(&e.task_id) => true,
            Some(e) if policy.keep_accepted && e.accepted => true,
            Some(e) => now.saturating_sub(e.last_used) < min_idle,
            None => now.saturating_sub(image.created_ms) < min_idle,
        };
        if keep {
            report.images_kept += 1;
            continue;
        }
        match engine.remove_image(&image.tag) {
            Ok(bytes) => {
                cache.evict_tag(&image.tag);
                report.images_removed += 1;
                report.bytes_reclaimed += bytes;
            }
            Err(e) => report.errors.push(format!("image {}: {e}", image.tag)),
        }
    }
    report
}
