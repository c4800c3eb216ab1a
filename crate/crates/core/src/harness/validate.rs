use std::fs;
use std::path::Path;

use super::cache::ImageCache;
use super::engine::{ContainerEngine, RunRequest};
use super::{tail, ExecutionLog, HarnessError, RunLimits, ValidationVerdict, VerdictStatus};
use crate::ingest::TaskCandidate;
use crate::synthesis::{inject_test_patch, DockerfileDraft, EvalScriptDraft, InjectError, HEREDOC_DELIMITER};

const LOG_TAIL: usize = 4000;

/// `openswe/task-<id>:iter<k>`, with the id lowercased into a valid
/// repository name.
pub fn image_tag(task_id: &str, iteration: u32) -> String {
    let id: String = task_id
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '-' })
        .collect();
    format!("openswe/task-{id}:iter{iteration}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildResult {
    Built { tag: String, log: String },
    Cached { tag: String },
    Failed { log_tail: String },
}

impl BuildResult {
    pub fn tag(&self) -> Option<&str> {
        match self {
            Self::Built { tag, .. } | Self::Cached { tag } => Some(tag),
            Self::Failed { .. } => None,
        }
    }
}

/// Builds the draft in `ctx` unless the cache already holds an image for
/// the same task and Dockerfile hash.
pub fn build_image(
    engine: &dyn ContainerEngine,
    cache: &ImageCache,
    ctx: &Path,
    task_id: &str,
    draft: &DockerfileDraft,
) -> Result<BuildResult, HarnessError> {
    if let Some(tag) = cache.lookup(task_id, &draft.content_hash) {
        let present = engine.images().map(|imgs| imgs.iter().any(|i| i.tag == tag)).unwrap_or(true);
        if present {
            cache.record_hit();
            return Ok(BuildResult::Cached { tag });
        }
        cache.evict_tag(&tag);
    }
    fs::create_dir_all(ctx)?;
    fs::write(ctx.join("Dockerfile"), &draft.text)?;
    let tag = image_tag(task_id, draft.iteration);
    let outcome = engine.build(ctx, &tag)?;
    if !outcome.success {
        return Ok(BuildResult::Failed { log_tail: tail(&outcome.log, LOG_TAIL).to_string() });
    }
    cache.insert(task_id, &draft.content_hash, &tag);
    Ok(BuildResult::Built { tag, log: outcome.log })
}

pub fn run_eval(
    engine: &dyn ContainerEngine,
    image: &str,
    script: &str,
    limits: &RunLimits,
) -> Result<ExecutionLog, HarnessError> {
    let out = engine.run(&RunRequest { image, script, limits, network: limits.eval_network })?;
    Ok(ExecutionLog::from_output(out.output, out.exit_code, out.duration, out.timed_out))
}

/// The test-patched script with the fix applied first, in its own heredoc
/// placed right after the shebang.
pub fn script_with_fix(script: &str, fix_patch: &str) -> Result<String, InjectError> {
    if fix_patch.contains(HEREDOC_DELIMITER) {
        return Err(InjectError::DelimiterCollision);
    }
    if fix_patch.is_empty() {
        return Ok(script.to_string());
    }
    let mut body = fix_patch.to_string();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    let block = format!(
        "(cd /testbed && git apply -v - <<'{HEREDOC_DELIMITER}'\n{body}{HEREDOC_DELIMITER}\n) || echo \"fix patch did not apply\" >&2\n"
    );
    let (head, rest) = match script.split_once('\n') {
        Some((first, rest)) if first.starts_with("#!") => (format!("{first}\n"), rest),
        _ => (String::new(), script),
    };
    Ok(format!("{head}{block}{rest}"))
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    pub limits: RunLimits,
    /// Registry for certified images. Validation never pushes; the caller
    /// publishes with [`publish_image`] once the task is certified.
    pub registry: Option<String>,
    /// Re-run both conditions after acceptance to catch flaky tests.
    pub double_run: bool,
}

struct Runs {
    status: VerdictStatus,
    test_only: ExecutionLog,
    with_fix: Option<ExecutionLog>,
}

fn run_conditions(
    engine: &dyn ContainerEngine,
    image: &str,
    test_only_script: &str,
    with_fix_script: &str,
    limits: &RunLimits,
) -> Result<Runs, HarnessError> {
    let test_only = run_eval(engine, image, test_only_script, limits)?;
    let early = if test_only.timed_out {
        Some(VerdictStatus::Timeout)
    } else {
        match test_only.exit_marker {
            None => Some(VerdictStatus::RejectedMissingMarker),
            Some(0) => Some(VerdictStatus::RejectedNoFail),
            Some(_) => None,
        }
    };
    if let Some(status) = early {
        return Ok(Runs { status, test_only, with_fix: None });
    }
    let with_fix = run_eval(engine, image, with_fix_script, limits)?;
    let status = if with_fix.timed_out {
        VerdictStatus::Timeout
    } else {
        match with_fix.exit_marker {
            None => VerdictStatus::RejectedMissingMarker,
            Some(0) => VerdictStatus::Accepted,
            Some(_) => VerdictStatus::RejectedFixFails,
        }
    };
    Ok(Runs { status, test_only, with_fix: Some(with_fix) })
}

/// Builds (or reuses) the image and checks both conditions: the tests must
/// fail with only the test patch and pass once the fix is applied too.
pub fn validate_instance(
    engine: &dyn ContainerEngine,
    cache: &ImageCache,
    ctx: &Path,
    candidate: &TaskCandidate,
    draft: &DockerfileDraft,
    script: &EvalScriptDraft,
    opts: &ValidationOptions,
) -> Result<ValidationVerdict, HarnessError> {
    let task_id = candidate.task_id();
    let mut verdict = ValidationVerdict {
        status: VerdictStatus::BuildFailed,
        test_only_log: None,
        with_fix_log: None,
        image_ref: None,
        dockerfile_hash: draft.content_hash.clone(),
        build_log_tail: None,
        push_error: None,
        flaky: false,
    };
    let tag = match build_image(engine, cache, ctx, &task_id, draft)? {
        BuildResult::Failed { log_tail } => {
            verdict.build_log_tail = Some(log_tail);
            return Ok(verdict);
        }
        other => other.tag().expect("built or cached").to_string(),
    };
    verdict.image_ref = Some(tag.clone());

    let script_error = |e: InjectError| HarnessError::Script(e.to_string());
    let test_only = inject_test_patch(script, &candidate.test_patch).map_err(script_error)?;
    let with_fix = script_with_fix(&test_only, &candidate.fix_patch).map_err(script_error)?;

    let runs = run_conditions(engine, &tag, &test_only, &with_fix, &opts.limits)?;
    verdict.status = runs.status;
    verdict.test_only_log = Some(runs.test_only);
    verdict.with_fix_log = runs.with_fix;

    if verdict.status == VerdictStatus::Accepted && opts.double_run {
        let again = run_conditions(engine, &tag, &test_only, &with_fix, &opts.limits)?;
        if again.status != VerdictStatus::Accepted {
            verdict.status = again.status;
            verdict.flaky = true;
            verdict.test_only_log = Some(again.test_only);
            verdict.with_fix_log = again.with_fix;
        }
    }

    if verdict.status == VerdictStatus::Accepted {
        cache.mark_accepted(&tag);
    }
    Ok(verdict)
}

/// Pushes the verdict's image and records the remote reference, or the
/// error if the push fails.
pub fn publish_image(engine: &dyn ContainerEngine, verdict: &mut ValidationVerdict, registry: &str) {
    let Some(tag) = verdict.image_ref.clone() else { return };
    match engine.push(&tag, registry) {
        Ok(remote) => verdict.image_ref = Some(remote),
        Err(e) => verdict.push_error = Some(e.to_string()),
    }
}
