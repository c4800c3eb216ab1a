use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::report::{report_from_evidence, RetrievalReport};
use super::sandbox::{ExplorationState, ExploreError};
use super::ExplorationConfig;
use crate::ingest::{touched_paths, TaskCandidate};
use crate::modelio::{
    bindings, complete, render_prompt, AuditLog, Message, ModelClient, ModelError, TemplateId,
};

/// Root-level files suggested on a first, unguided pass.
pub const SEED_HINTS: &[&str] = &[
    "README.md",
    "README.rst",
    "README.txt",
    "CONTRIBUTING.md",
    "CONTRIBUTING.rst",
    "requirements.txt",
    "requirements-dev.txt",
    "requirements_dev.txt",
    "requirements-test.txt",
    "pyproject.toml",
    "setup.py",
    "setup.cfg",
    "tox.ini",
    "pytest.ini",
    "environment.yml",
    "Pipfile",
    ".python-version",
    ".github/workflows",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolCall {
    Browse { path: String },
    Search { pattern: String },
    Digest { path: String },
    Finish(RetrievalReport),
}

#[derive(Deserialize)]
struct RawCall {
    name: String,
    #[serde(default)]
    arguments: Value,
}

/// Parses the single ```tool_call fenced block of a reply.
pub fn parse_tool_call(reply: &str) -> Result<ToolCall, String> {
    const FENCE: &str = "```tool_call";
    let start = reply
        .rfind(FENCE)
        .ok_or("no ```tool_call block found")?
        + FENCE.len();
    let body = &reply[start..];
    let end = body.find("```").ok_or("unterminated ```tool_call block")?;
    let raw: RawCall =
        serde_json::from_str(body[..end].trim()).map_err(|e| format!("invalid tool call JSON: {e}"))?;
    let arg = |key: &str| -> Result<String, String> {
        raw.arguments
            .get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("{} requires a string argument {key:?}", raw.name))
    };
    match raw.name.as_str() {
        "browse" => Ok(ToolCall::Browse {
            path: arg("path").unwrap_or_else(|_| ".".into()),
        }),
        "search" => {
            let pattern = arg("pattern")?;
            if pattern.is_empty() {
                return Err("search pattern must be non-empty".into());
            }
            Ok(ToolCall::Search { pattern })
        }
        "digest" => Ok(ToolCall::Digest { path: arg("path")? }),
        "finish" => serde_json::from_value(raw.arguments.clone())
            .map(ToolCall::Finish)
            .map_err(|e| format!("invalid finish report: {e}")),
        other => Err(format!("unknown tool {other:?}")),
    }
}

/// Paths a focused request allows digesting. Empty means unrestricted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FocusScope {
    pub targets: Vec<String>,
}

impl FocusScope {
    pub fn from_request(request: &str) -> Self {
        const ABBREVIATIONS: [&str; 3] = ["e.g", "i.e", "etc"];
        let mut targets = Vec::new();
        for raw in request.split(|c: char| c.is_whitespace() || ",;()[]`'\"".contains(c)) {
            let t = raw
                .trim_end_matches([':', '.', '!', '?'])
                .trim_start_matches("./")
                .trim_end_matches('*');
            if t.len() < 3 || ABBREVIATIONS.contains(&t) {
                continue;
            }
            if !(t.contains('.') || t.contains('/')) {
                continue;
            }
            if !t
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "._-/".contains(c))
            {
                continue;
            }
            if !targets.contains(&t.to_string()) {
                targets.push(t.to_string());
            }
        }
        Self { targets }
    }

    pub fn is_unrestricted(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn allows(&self, rel: &str) -> bool {
        self.is_unrestricted()
            || self.targets.iter().any(|t| {
                let dir = t.trim_end_matches('/');
                rel == dir
                    || rel.ends_with(&format!("/{dir}"))
                    || rel.starts_with(&format!("{dir}/"))
                    || rel.contains(&format!("/{dir}/"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCall {
    pub round: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationOutcome {
    pub report: RetrievalReport,
    pub rounds_used: usize,
    pub collected: Vec<(String, String)>,
    pub skipped_calls: Vec<SkippedCall>,
    /// False when the budget ran out and the report was inferred.
    pub finished_by_model: bool,
}

fn execute(state: &mut ExplorationState, scope: &FocusScope, call: &ToolCall) -> Result<String, ExploreError> {
    match call {
        ToolCall::Browse { path } => {
            let entries = state.browse(path)?;
            Ok(entries
                .iter()
                .map(|e| format!("{:<8} {:>10} {}\n", format!("{:?}", e.kind).to_lowercase(), e.size, e.name))
                .collect())
        }
        ToolCall::Search { pattern } => {
            let hits = state.search(pattern);
            Ok(if hits.is_empty() {
                "no matches\n".to_string()
            } else {
                hits.join("\n") + "\n"
            })
        }
        ToolCall::Digest { path } => {
            let resolved = state.resolve(path)?;
            let rel = state.relative(&resolved);
            if !scope.allows(&rel) {
                return Err(ExploreError::OutOfScope(rel));
            }
            state.digest(&rel)
        }
        ToolCall::Finish(_) => unreachable!("finish is handled by the loop"),
    }
}

fn seed_message(state: &ExplorationState, scope: &FocusScope) -> String {
    match &state.focus_request {
        None => {
            let present: Vec<&str> = SEED_HINTS
                .iter()
                .copied()
                .filter(|h| state.repo_root().join(h).exists())
                .collect();
            format!(
                "No specific request. Do a short, document-first pass. Files present at the repository root worth reading first: {}.",
                if present.is_empty() { "(none of the usual files)".to_string() } else { present.join(", ") }
            )
        }
        Some(req) => {
            let allowed = if scope.is_unrestricted() {
                "any file needed to answer the request".to_string()
            } else {
                scope.targets.join(", ")
            };
            format!("Specific request: {req}\nRestrict digests to: {allowed}.")
        }
    }
}

/// Drives the exploration agent for at most `max_rounds` model turns.
///
/// Malformed or failing tool calls are recorded and fed back to the model
/// without ending the exploration. When the budget runs out a report is
/// inferred from what was digested.
pub fn run_exploration(
    candidate: &TaskCandidate,
    repo_root: &Path,
    focus_request: Option<&str>,
    client: &dyn ModelClient,
    audit: &mut AuditLog,
    config: &ExplorationConfig,
) -> Result<ExplorationOutcome, ModelError> {
    let focus = focus_request.map(str::trim).filter(|f| !f.is_empty());
    let mut state = ExplorationState::new(repo_root, config, focus.map(str::to_string))
        .map_err(|e| ModelError::Protocol(format!("cannot explore: {e}")))?;
    let scope = focus.map(FocusScope::from_request).unwrap_or_default();

    let mut files: Vec<String> = touched_paths(&candidate.fix_patch).unwrap_or_default();
    files.extend(touched_paths(&candidate.test_patch).unwrap_or_default());
    let system = render_prompt(
        TemplateId::Exploration,
        &bindings([
            ("repo_id", candidate.repo_id.clone()),
            ("base_commit", candidate.base_commit.clone()),
            ("patch_files", files.iter().map(|f| format!("- {f}\n")).collect()),
            ("request", focus.unwrap_or("none").to_string()),
            ("max_rounds", config.max_rounds.to_string()),
        ]),
    )
    .map_err(|e| ModelError::Protocol(e.to_string()))?;
    let mut messages = vec![Message::system(system), Message::user(seed_message(&state, &scope))];
    let mut skipped = Vec::new();

    while state.rounds_used < state.max_rounds {
        let reply = complete(&messages, client, TemplateId::Exploration, audit)?;
        state.rounds_used += 1;
        let round = state.rounds_used;
        messages.push(Message::assistant(reply.clone()));

        let feedback = match parse_tool_call(&reply) {
            Ok(ToolCall::Finish(report)) => {
                return Ok(ExplorationOutcome {
                    report: report.normalized(config.report_cap),
                    rounds_used: state.rounds_used,
                    collected: state.collected,
                    skipped_calls: skipped,
                    finished_by_model: true,
                });
            }
            Ok(call) => match execute(&mut state, &scope, &call) {
                Ok(out) => out,
                Err(e) => {
                    skipped.push(SkippedCall { round, error: e.to_string() });
                    format!("Tool error: {e}")
                }
            },
            Err(e) => {
                skipped.push(SkippedCall { round, error: e.clone() });
                format!("Could not run your tool call: {e}. Send exactly one ```tool_call block.")
            }
        };
        let left = state.max_rounds - state.rounds_used;
        let budget = match left {
            0 => String::new(),
            1 => "\nThis is your last reply: call finish now.".to_string(),
            n => format!("\n{n} replies left."),
        };
        messages.push(Message::user(format!("{feedback}{budget}")));
    }

    Ok(ExplorationOutcome {
        report: report_from_evidence(&state.collected).normalized(config.report_cap),
        rounds_used: state.rounds_used,
        collected: state.collected,
        skipped_calls: skipped,
        finished_by_model: false,
    })
}
