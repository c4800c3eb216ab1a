//! Difficulty-based selection of rollouts and trajectory sanitization for
//! training export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub context_limit: u32,
    pub step_limit: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, context_limit: 200_000, step_limit: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub observation: String,
    /// Excluded from the training loss; the content stays.
    #[serde(default)]
    pub mask: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    #[serde(default)]
    pub terminal_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task_id: String,
    /// 1-based.
    pub attempt_index: u32,
    pub resolved: bool,
    pub trajectory: Trajectory,
    pub scaffold: String,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

/// Observation fragments that mark a step as a formatting or tool error.
pub const DEFAULT_ERROR_MARKERS: &[&str] = &[
    "Your output was not formatted correctly",
    "did not contain a valid tool call",
    "Failed to parse tool call",
    "Invalid function call",
    "Unknown tool",
    "Missing required parameter",
    "Command timed out",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub attempts_per_task: u32,
    pub keep_pass_counts: BTreeSet<u32>,
    /// Case-sensitive substrings; any action containing one rejects the
    /// whole trajectory.
    pub forbidden_action_substrings: Vec<String>,
    pub error_markers: Vec<String>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            attempts_per_task: 4,
            keep_pass_counts: BTreeSet::from([1, 2]),
            forbidden_action_substrings: vec!["git pull".into()],
            error_markers: DEFAULT_ERROR_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        match self.keep_pass_counts.iter().find(|c| **c > self.attempts_per_task) {
            Some(c) => Err(CurationError::Config(format!(
                "keep count {c} exceeds {} attempts per task",
                self.attempts_per_task
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("duplicate attempt {attempt} for {task_id} ({scaffold})")]
    DuplicateAttempt { task_id: String, scaffold: String, attempt: u32 },
    #[error("attempt {attempt} for {task_id} ({scaffold}) is outside 1..={max}")]
    AttemptOutOfRange { task_id: String, scaffold: String, attempt: u32, max: u32 },
    #[error("invalid curation config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub passes: u32,
    pub attempts: u32,
    /// Fewer attempts than configured were recorded.
    pub incomplete: bool,
}

/// Pass counts per (task, scaffold).
pub type PassCounts = BTreeMap<(String, String), PassCount>;

pub fn aggregate_pass_counts(rollouts: &[RolloutRecord], config: &CurationConfig) -> Result<PassCounts, CurationError> {
    let mut seen: BTreeMap<(String, String), BTreeSet<u32>> = BTreeMap::new();
    let mut counts = PassCounts::new();
    for r in rollouts {
        let key = (r.task_id.clone(), r.scaffold.clone());
        if r.attempt_index == 0 || r.attempt_index > config.attempts_per_task {
            return Err(CurationError::AttemptOutOfRange {
                task_id: r.task_id.clone(),
                scaffold: r.scaffold.clone(),
                attempt: r.attempt_index,
                max: config.attempts_per_task,
            });
        }
        if !seen.entry(key.clone()).or_default().insert(r.attempt_index) {
            return Err(CurationError::DuplicateAttempt {
                task_id: r.task_id.clone(),
                scaffold: r.scaffold.clone(),
                attempt: r.attempt_index,
            });
        }
        let c = counts.entry(key).or_insert(PassCount { passes: 0, attempts: 0, incomplete: true });
        c.attempts += 1;
        c.passes += r.resolved as u32;
    }
    for c in counts.values_mut() {
        c.incomplete = c.attempts < config.attempts_per_task;
    }
    Ok(counts)
}

/// Tasks where at least one scaffold has a complete set of attempts and a
/// pass count in the keep set.
pub fn select_instances(counts: &PassCounts, config: &CurationConfig) -> BTreeSet<String> {
    counts
        .iter()
        .filter(|(_, c)| !c.incomplete && config.keep_pass_counts.contains(&c.passes))
        .map(|((task, _), _)| task.clone())
        .collect()
}

/// Rejects trajectories with a forbidden action and masks error steps.
pub fn sanitize_trajectory(traj: &Trajectory, config: &CurationConfig) -> Option<Trajectory> {
    let forbidden = |action: &str| config.forbidden_action_substrings.iter().any(|f| action.contains(f.as_str()));
    if traj.steps.iter().any(|s| forbidden(&s.action)) {
        return None;
    }
    let mut out = traj.clone();
    for step in &mut out.steps {
        if config.error_markers.iter().any(|m| step.observation.contains(m.as_str())) {
            step.mask = true;
        }
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub task_id: String,
    pub scaffold: String,
    pub attempt_index: u32,
    pub sampling: SamplingConfig,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub tasks_in: usize,
    pub tasks_kept: usize,
    pub resolved_trajectories_of_kept: usize,
    pub rejected_forbidden: usize,
    pub rejected_over_step_limit: usize,
    pub trajectories_out: usize,
    pub masked_steps: usize,
    /// Kept tasks left without any exportable trajectory.
    pub dropped_tasks: Vec<String>,
}

enum Fate {
    Export(TrainingRecord),
    Forbidden,
    OverLimit,
}

/// Writes one JSONL record per surviving resolved trajectory of a kept
/// task. Output order follows (task, scaffold, attempt).
pub fn export_training_set(
    rollouts: &[RolloutRecord],
    kept: &BTreeSet<String>,
    config: &CurationConfig,
    out: &Path,
    exec: Exec,
) -> Result<ExportReport, CurationError> {
    let mut candidates: Vec<&RolloutRecord> =
        rollouts.iter().filter(|r| r.resolved && kept.contains(&r.task_id)).collect();
    candidates.sort_by(|a, b| (&a.task_id, &a.scaffold, a.attempt_index).cmp(&(&b.task_id, &b.scaffold, b.attempt_index)));

    let fates = exec.map(&candidates, |r| {
        if r.trajectory.steps.len() > r.sampling.step_limit as usize {
            return Fate::OverLimit;
        }
        match sanitize_trajectory(&r.trajectory, config) {
            None => Fate::Forbidden,
            Some(t) => Fate::Export(TrainingRecord {
                task_id: r.task_id.clone(),
                scaffold: r.scaffold.clone(),
                attempt_index: r.attempt_index,
                sampling: r.sampling.clone(),
                steps: t.steps,
            }),
        }
    });

    let tasks_in: BTreeSet<&str> = rollouts.iter().map(|r| r.task_id.as_str()).collect();
    let mut report = ExportReport {
        tasks_in: tasks_in.len(),
        tasks_kept: kept.iter().filter(|k| tasks_in.contains(k.as_str())).count(),
        resolved_trajectories_of_kept: candidates.len(),
        ..Default::default()
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = crate::fsutil::temp_sibling(out);
    let mut w = io::BufWriter::new(fs::File::create(&tmp)?);
    let mut exported: BTreeSet<&str> = BTreeSet::new();
    for (fate, r) in fates.iter().zip(&candidates) {
        match fate {
            Fate::Forbidden => report.rejected_forbidden += 1,
            Fate::OverLimit => report.rejected_over_step_limit += 1,
            Fate::Export(rec) => {
                serde_json::to_writer(&mut w, rec).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
                report.trajectories_out += 1;
                report.masked_steps += rec.steps.iter().filter(|s| s.mask).count();
                exported.insert(r.task_id.as_str());
            }
        }
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&tmp, out)?;
    report.dropped_tasks = kept
        .iter()
        .filter(|k| tasks_in.contains(k.as_str()) && !exported.contains(k.as_str()))
        .cloned()
        .collect();
    Ok(report)
}

/// Reads every `*.jsonl` file of `dir` (or `dir` itself when it is a file).
pub fn load_rollouts(dir: &Path) -> Result<Vec<RolloutRecord>, CurationError> {
    let mut files = Vec::new();
    if dir.is_file() {
        files.push(dir.to_path_buf());
    } else {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    }
    let mut out = Vec::new();
    for f in files {
        let reader = io::BufReader::new(fs::File::open(&f)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| CurationError::Parse {
                path: f.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
    }
    Ok(out)
}

/// Aggregate, select and export in one pass.
pub fn curate(
    rollouts: &[RolloutRecord],
    config: &CurationConfig,
    out: &Path,
    exec: Exec,
) -> Result<(PassCounts, ExportReport), CurationError> {
    config.validate()?;
    let counts = aggregate_pass_counts(rollouts, config)?;
    let kept = select_instances(&counts, config);
    let report = export_training_set(rollouts, &kept, config, out, exec)?;
    Ok((counts, report))
}
