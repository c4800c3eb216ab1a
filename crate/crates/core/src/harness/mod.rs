//! Image builds, evaluation runs and fail-to-pass validation.

mod cache;
mod docker;
mod engine;
mod local;
mod prune;
mod validate;

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::{END_MARKER, START_MARKER};

pub use cache::{ImageCache, ImageCacheEntry};
pub use docker::DockerEngine;
pub use engine::{
    BuildOutcome, ContainerEngine, ContainerInfo, EngineError, ImageInfo, RecordingEngine, RunOutcome, RunRequest,
};
pub use local::LocalEngine;
pub use prune::{prune_resources, PrunePolicy, ReclaimReport};
pub use validate::{
    build_image, image_tag, publish_image, run_eval, script_with_fix, validate_instance, BuildResult, ValidationOptions,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLimits {
    pub cpu_cores: u32,
    pub memory_bytes: u64,
    pub storage_bytes: u64,
    #[serde(with = "duration_secs")]
    pub wall_clock_timeout: Duration,
    /// Network access during evaluation runs. Builds always have network.
    pub eval_network: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            cpu_cores: 4,
            memory_bytes: 24 << 30,
            storage_bytes: 200_000_000_000,
            wall_clock_timeout: Duration::from_secs(30 * 60),
            eval_network: false,
        }
    }
}

impl RunLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.cpu_cores == 0 || self.memory_bytes == 0 || self.storage_bytes == 0 {
            return Err("resource limits must be positive".into());
        }
        if self.wall_clock_timeout.is_zero() {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub full_text: String,
    pub test_section: Option<String>,
    pub exit_marker: Option<u64>,
    pub container_exit: i32,
    pub duration_ms: u64,
    pub timed_out: bool,
}

impl ExecutionLog {
    pub fn from_output(full_text: String, container_exit: i32, duration: Duration, timed_out: bool) -> Self {
        Self {
            test_section: extract_test_section(&full_text),
            exit_marker: parse_exit_marker(&full_text),
            full_text,
            container_exit,
            duration_ms: duration.as_millis() as u64,
            timed_out,
        }
    }

    /// Last `max` bytes of the output, cut at a character boundary.
    pub fn tail(&self, max: usize) -> &str {
        tail(&self.full_text, max)
    }
}

pub(crate) fn tail(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictStatus {
    Accepted,
    RejectedNoFail,
    RejectedFixFails,
    RejectedMissingMarker,
    BuildFailed,
    Timeout,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accepted => "Accepted",
            Self::RejectedNoFail => "RejectedNoFail",
            Self::RejectedFixFails => "RejectedFixFails",
            Self::RejectedMissingMarker => "RejectedMissingMarker",
            Self::BuildFailed => "BuildFailed",
            Self::Timeout => "Timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub status: VerdictStatus,
    /// Absent only when the build failed.
    pub test_only_log: Option<ExecutionLog>,
    pub with_fix_log: Option<ExecutionLog>,
    pub image_ref: Option<String>,
    pub dockerfile_hash: String,
    /// Tail of the build log, kept when the build failed.
    pub build_log_tail: Option<String>,
    /// Registry push failure; does not revoke acceptance.
    pub push_error: Option<String>,
    /// Set when a double run disagreed with the first run.
    pub flaky: bool,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The engine itself failed; the task should be retried elsewhere.
    #[error("container engine: {0}")]
    Infra(#[from] EngineError),
    #[error("script preparation: {0}")]
    Script(String),
    #[error("build context: {0}")]
    Io(#[from] std::io::Error),
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^OPENSWE_EXIT_CODE=([0-9]+)$").expect("static regex"))
}

/// Value of the last `OPENSWE_EXIT_CODE=<n>` line. Lines are matched whole
/// after trailing whitespace is trimmed; values that do not fit in a u64
/// are ignored.
pub fn parse_exit_marker(log: &str) -> Option<u64> {
    log.lines()
        .rev()
        .filter_map(|l| marker_re().captures(l.trim_end()))
        .find_map(|c| c[1].parse().ok())
}

/// Text strictly between the first start-marker line and the next
/// end-marker line.
pub fn extract_test_section(log: &str) -> Option<String> {
    let mut offset = 0;
    let mut start = None;
    for line in log.split_inclusive('\n') {
        let bare = line.trim_end();
        match start {
            None if bare == START_MARKER => start = Some(offset + line.len()),
            Some(s) if bare == END_MARKER => return Some(log[s..offset].to_string()),
            _ => {}
        }
        offset += line.len();
    }
    None
}
