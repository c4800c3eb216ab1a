//! The per-task loop: explore, write, validate, analyze, then either stop
//! or route feedback to the agents that need it.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::explorer::{run_exploration, ExplorationConfig, RetrievalReport};
use crate::harness::{
    publish_image, validate_instance, ContainerEngine, HarnessError, ImageCache, ValidationOptions, ValidationVerdict,
    VerdictStatus,
};
use crate::ingest::TaskCandidate;
use crate::modelio::{
    bindings, complete_with_repair, extract_analysis_decision, render_prompt, AnalysisDecision, AuditLog, Message,
    ModelClient, ModelError, TemplateId,
};
use crate::synthesis::{
    find_hardcoded_markers, propose_dockerfile, propose_eval_script, BaseImageCatalog, DockerfileDraft,
    EvalScriptDraft, Proposal, ProvisionError, RepoCache,
};

pub use store::TaskStore;

pub const DEFAULT_MAX_ITERATIONS: u32 = 6;
const LOG_TAIL: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Running,
    Accepted,
    Unsolvable,
    Exhausted,
    Infra,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        self != Self::Running
    }
}

/// Work scheduled for the next iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Explore,
    Dockerfile,
    EvalScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub candidate: TaskCandidate,
    pub iteration: u32,
    pub max_iterations: u32,
    pub current_dockerfile: Option<DockerfileDraft>,
    pub current_script: Option<EvalScriptDraft>,
    pub last_verdict: Option<ValidationVerdict>,
    pub last_decision: Option<AnalysisDecision>,
    pub status: TaskStatus,
    pub report: RetrievalReport,
    /// Lines of the current script that print a literal exit marker.
    pub hardcoded_marker_lines: Vec<usize>,
}

impl IterationState {
    pub fn new(candidate: TaskCandidate, max_iterations: u32) -> Self {
        Self {
            candidate,
            iteration: 0,
            max_iterations,
            current_dockerfile: None,
            current_script: None,
            last_verdict: None,
            last_decision: None,
            status: TaskStatus::Running,
            report: RetrievalReport::default(),
            hardcoded_marker_lines: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub candidate: TaskCandidate,
    pub final_status: TaskStatus,
    pub dockerfile: Option<String>,
    pub dockerfile_hash: Option<String>,
    pub eval_script: Option<String>,
    pub image_ref: Option<String>,
    pub iteration_count: u32,
    pub audit_log: Option<PathBuf>,
    pub verdict: Option<ValidationVerdict>,
    pub decision: Option<AnalysisDecision>,
    pub hardcoded_marker_lines: Vec<usize>,
    /// Why the loop stopped, for statuses other than Accepted.
    pub note: Option<String>,
}

impl TaskRecord {
    fn from_state(state: &IterationState, audit: &AuditLog, note: Option<String>) -> Self {
        Self {
            task_id: state.candidate.task_id(),
            candidate: state.candidate.clone(),
            final_status: state.status,
            dockerfile: state.current_dockerfile.as_ref().map(|d| d.text.clone()),
            dockerfile_hash: state.current_dockerfile.as_ref().map(|d| d.content_hash.clone()),
            eval_script: state.current_script.as_ref().map(|s| s.template_text.clone()),
            image_ref: state.last_verdict.as_ref().and_then(|v| v.image_ref.clone()),
            iteration_count: state.iteration,
            audit_log: audit.path().map(PathBuf::from),
            verdict: state.last_verdict.clone(),
            decision: state.last_decision.clone(),
            hardcoded_marker_lines: state.hardcoded_marker_lines.clone(),
            note,
        }
    }

    /// Rule-based acceptance, the analysis agent's sign-off and a clean
    /// static marker check, all read from the record itself.
    pub fn is_certified(&self) -> bool {
        self.final_status == TaskStatus::Accepted
            && self.verdict.as_ref().is_some_and(|v| v.status == VerdictStatus::Accepted)
            && self.decision.as_ref().is_some_and(|d| d.is_finish)
            && self.hardcoded_marker_lines.is_empty()
            && self.eval_script.as_deref().is_some_and(|s| find_hardcoded_markers(s).is_empty())
            && self.dockerfile.is_some()
            && self.image_ref.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub max_iterations: u32,
    pub exploration: ExplorationConfig,
    pub validation: ValidationOptions,
    pub catalog: BaseImageCatalog,
    /// Build contexts go under `<work_dir>/<task id>/`.
    pub work_dir: PathBuf,
    /// How long a running loop protects its images from pruning.
    pub pin_ttl_ms: u64,
}

impl LoopConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            exploration: ExplorationConfig::default(),
            validation: ValidationOptions::default(),
            catalog: BaseImageCatalog::standard(),
            work_dir: work_dir.into(),
            pin_ttl_ms: 6 * 3600 * 1000,
        }
    }
}

/// Everything a loop talks to.
pub struct LoopDeps<'a> {
    pub client: &'a dyn ModelClient,
    pub engine: &'a dyn ContainerEngine,
    pub images: &'a ImageCache,
    pub repos: &'a RepoCache,
}

fn exit_text(log: Option<&crate::harness::ExecutionLog>) -> String {
    match log {
        None => "not run".into(),
        Some(l) if l.timed_out => "timed out".into(),
        Some(l) => l.exit_marker.map(|m| m.to_string()).unwrap_or_else(|| "missing".into()),
    }
}

fn log_tail(log: Option<&crate::harness::ExecutionLog>) -> String {
    log.map(|l| l.tail(LOG_TAIL).to_string()).unwrap_or_else(|| "(not run)".into())
}

/// Asks the analysis agent about the current verdict. A script that prints
/// a literal exit marker is flagged statically and the decision is forced
/// to non-finish. A decision that cannot be parsed after one re-prompt
/// counts as non-finish with no guidance.
pub fn analyze_results(
    state: &mut IterationState,
    client: &dyn ModelClient,
    audit: &mut AuditLog,
) -> Result<AnalysisDecision, ModelError> {
    let verdict = state
        .last_verdict
        .as_ref()
        .ok_or_else(|| ModelError::Protocol("analysis needs a verdict".into()))?;
    let script = state.current_script.as_ref().map(|s| s.template_text.as_str()).unwrap_or("");
    state.hardcoded_marker_lines = find_hardcoded_markers(script);

    let test_only = verdict.test_only_log.as_ref();
    let with_fix = verdict.with_fix_log.as_ref();
    let system = render_prompt(
        TemplateId::Analysis,
        &bindings([
            ("verdict_status", verdict.status.as_str().to_string()),
            ("test_only_exit", exit_text(test_only)),
            ("with_fix_exit", exit_text(with_fix)),
            (
                "dockerfile",
                state.current_dockerfile.as_ref().map(|d| d.text.clone()).unwrap_or_default(),
            ),
            ("eval_script", script.to_string()),
            (
                "test_section",
                test_only
                    .and_then(|l| l.test_section.clone())
                    .unwrap_or_else(|| "(no test section found)".into()),
            ),
            (
                "test_only_log",
                match (&verdict.build_log_tail, test_only) {
                    (Some(build), None) => format!("(build failed)\n{build}"),
                    _ => log_tail(test_only),
                },
            ),
            ("with_fix_log", log_tail(with_fix)),
        ]),
    )
    .map_err(|e| ModelError::Protocol(e.to_string()))?;

    let mut user = format!("Task {} (iteration {}).", state.candidate.task_id(), state.iteration);
    if !state.hardcoded_marker_lines.is_empty() {
        user.push_str(&format!(
            "\nStatic check: script lines {:?} print a fixed OPENSWE_EXIT_CODE value instead of $rc.",
            state.hardcoded_marker_lines
        ));
    }
    let messages = [Message::system(system), Message::user(user)];
    let parsed = complete_with_repair(&messages, client, TemplateId::Analysis, audit, |reply| {
        extract_analysis_decision(reply).map_err(|e| e.to_string())
    })?;
    let mut decision = parsed.unwrap_or_else(|(_, err)| {
        warn!(error = %err, "analysis reply unusable; treating as non-finish");
        AnalysisDecision::default()
    });
    if !state.hardcoded_marker_lines.is_empty() {
        decision.is_finish = false;
        if decision.guidance_for_write_eval_script_agent.trim().is_empty() {
            decision.guidance_for_write_eval_script_agent = format!(
                "Lines {:?} print a fixed OPENSWE_EXIT_CODE value. Capture the real test status with rc=$? and print OPENSWE_EXIT_CODE=$rc.",
                state.hardcoded_marker_lines
            );
        }
    }
    Ok(decision)
}

/// Agents to run next. Retrieval guidance alone also schedules the script
/// writer so that some artifact changes.
pub fn route_guidance(decision: &AnalysisDecision) -> BTreeSet<Action> {
    let has = |s: &str| !s.trim().is_empty();
    let mut out = BTreeSet::new();
    if has(&decision.guidance_for_context_retrieval_agent) {
        out.insert(Action::Explore);
    }
    if has(&decision.guidance_for_write_dockerfile_agent) {
        out.insert(Action::Dockerfile);
    }
    if has(&decision.guidance_for_write_eval_script_agent) {
        out.insert(Action::EvalScript);
    }
    if out == BTreeSet::from([Action::Explore]) {
        out.insert(Action::EvalScript);
    }
    out
}

type Stop = (TaskStatus, Option<String>);

fn model_failure(e: ModelError) -> Stop {
    (TaskStatus::Infra, Some(format!("model: {e}")))
}

/// Runs the loop for one candidate until a terminal status.
pub fn run_task_loop(
    candidate: &TaskCandidate,
    deps: &LoopDeps<'_>,
    config: &LoopConfig,
    audit: &mut AuditLog,
) -> TaskRecord {
    let task_id = candidate.task_id();
    deps.images.pin(&task_id, config.pin_ttl_ms);
    let mut state = IterationState::new(candidate.clone(), config.max_iterations.max(1));
    let (status, note) = drive(&mut state, deps, config, audit);
    deps.images.unpin(&task_id);
    state.status = status;
    info!(task = %task_id, status = ?status, iterations = state.iteration, "task finished");
    TaskRecord::from_state(&state, audit, note)
}

fn drive(state: &mut IterationState, deps: &LoopDeps<'_>, config: &LoopConfig, audit: &mut AuditLog) -> Stop {
    let candidate = state.candidate.clone();
    let ctx = config.work_dir.join(candidate.task_id()).join("ctx");
    let repo = match deps.repos.provision(&candidate, &ctx) {
        Ok(r) => r,
        Err(e @ ProvisionError::MissingCommit { .. }) => return (TaskStatus::Unsolvable, Some(e.to_string())),
        Err(e) => return (TaskStatus::Infra, Some(format!("provisioning: {e}"))),
    };

    let mut actions = BTreeSet::from([Action::Explore, Action::Dockerfile, Action::EvalScript]);
    let mut guidance: BTreeMap<Action, String> = BTreeMap::new();

    while state.iteration < state.max_iterations {
        state.iteration += 1;
        let it = state.iteration;
        info!(task = %candidate.task_id(), iteration = it, ?actions, "iteration");

        if actions.contains(&Action::Explore) {
            let focus = guidance.get(&Action::Explore).map(String::as_str);
            match run_exploration(&candidate, &repo, focus, deps.client, audit, &config.exploration) {
                Ok(outcome) => state.report = outcome.report,
                Err(e) => return model_failure(e),
            }
        }

        let mut failed: BTreeMap<Action, String> = BTreeMap::new();
        if actions.contains(&Action::Dockerfile) || state.current_dockerfile.is_none() {
            match propose_dockerfile(
                &candidate,
                &state.report,
                guidance.get(&Action::Dockerfile).map(String::as_str),
                state.current_dockerfile.as_ref(),
                it,
                &config.catalog,
                deps.client,
                audit,
            ) {
                Ok(Proposal::Ready(d)) => {
                    // An identical Dockerfile keeps its original draft so the
                    // cached image stays current.
                    if state.current_dockerfile.as_ref().map(|c| &c.content_hash) != Some(&d.content_hash) {
                        state.current_dockerfile = Some(d);
                    }
                }
                Ok(Proposal::Failed { reason, .. }) => {
                    failed.insert(Action::Dockerfile, reason);
                }
                Err(e) => return model_failure(e),
            }
        }
        if actions.contains(&Action::EvalScript) || state.current_script.is_none() {
            match propose_eval_script(
                &candidate,
                &state.report,
                guidance.get(&Action::EvalScript).map(String::as_str),
                state.current_script.as_ref(),
                it,
                deps.client,
                audit,
            ) {
                Ok(Proposal::Ready(s)) => state.current_script = Some(s),
                Ok(Proposal::Failed { reason, .. }) => {
                    failed.insert(Action::EvalScript, reason);
                }
                Err(e) => return model_failure(e),
            }
        }
        if !failed.is_empty() {
            // The writer could not produce a lint-clean artifact; its own
            // lint report becomes the guidance for the next attempt.
            actions = failed.keys().copied().collect();
            guidance = failed;
            continue;
        }

        let (Some(dockerfile), Some(script)) = (&state.current_dockerfile, &state.current_script) else {
            unreachable!("both drafts exist once proposals succeed");
        };
        let verdict = match validate_instance(
            deps.engine,
            deps.images,
            &ctx,
            &candidate,
            dockerfile,
            script,
            &config.validation,
        ) {
            Ok(v) => v,
            Err(HarnessError::Script(e)) => return (TaskStatus::Unsolvable, Some(e)),
            Err(e) => return (TaskStatus::Infra, Some(e.to_string())),
        };
        state.last_verdict = Some(verdict);

        let decision = match analyze_results(state, deps.client, audit) {
            Ok(d) => d,
            Err(e) => return model_failure(e),
        };
        state.last_decision = Some(decision.clone());
        let accepted = state.last_verdict.as_ref().is_some_and(|v| v.status == VerdictStatus::Accepted);
        if decision.is_finish {
            return if accepted {
                if let (Some(registry), Some(v)) = (&config.validation.registry, state.last_verdict.as_mut()) {
                    publish_image(deps.engine, v, registry);
                }
                (TaskStatus::Accepted, None)
            } else {
                (TaskStatus::Unsolvable, Some("analysis marked the task unsolvable".into()))
            };
        }
        actions = route_guidance(&decision);
        guidance = BTreeMap::from([
            (Action::Explore, decision.guidance_for_context_retrieval_agent.clone()),
            (Action::Dockerfile, decision.guidance_for_write_dockerfile_agent.clone()),
            (Action::EvalScript, decision.guidance_for_write_eval_script_agent.clone()),
        ]);
    }
    (TaskStatus::Exhausted, Some(format!("no acceptance within {} iterations", state.max_iterations)))
}
