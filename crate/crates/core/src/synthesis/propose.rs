use serde::{Deserialize, Serialize};

use super::lint::{instructions, lint_dockerfile_with, lint_eval_script};
use super::{select_python_version, BaseImageCatalog, DockerfileDraft, EvalScriptDraft};
use crate::explorer::RetrievalReport;
use crate::ingest::{touched_paths, TaskCandidate};
use crate::modelio::{
    bindings, complete_with_repair, extract_tagged_block, render_prompt, AuditLog, Message, ModelClient,
    ModelError, TemplateId,
};

/// Result of one proposal attempt, after at most one repair re-prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposal<T> {
    Ready(T),
    /// Both replies were unusable. `reason` explains the last failure and
    /// `raw` is the last reply.
    Failed { reason: String, raw: String },
}

impl<T> Proposal<T> {
    pub fn ready(self) -> Option<T> {
        match self {
            Self::Ready(v) => Some(v),
            Self::Failed { .. } => None,
        }
    }
}

fn task_context(candidate: &TaskCandidate, report: &RetrievalReport) -> String {
    let mut files: Vec<String> = touched_paths(&candidate.test_patch).unwrap_or_default();
    files.extend(touched_paths(&candidate.fix_patch).unwrap_or_default());
    format!(
        "Repository: {}\nBase commit: {}\nFiles touched by the change:\n{}\nIssue:\n{}\n\nEnvironment findings:\n{}",
        candidate.repo_id,
        candidate.base_commit,
        files.iter().map(|f| format!("- {f}\n")).collect::<String>(),
        candidate.issue_text.trim(),
        report.render(),
    )
}

fn revision_request(kind: &str, tag: &str, previous: Option<&str>, guidance: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(prev) = previous {
        out.push_str(&format!("\nThe previous {kind}:\n<{tag}>\n{prev}\n</{tag}>\n"));
    }
    match guidance.map(str::trim).filter(|g| !g.is_empty()) {
        Some(g) => out.push_str(&format!("\nRevise it according to this feedback:\n{g}\n")),
        None if previous.is_some() => out.push_str(&format!("\nProduce an improved {kind}.\n")),
        None => {}
    }
    out
}

fn list_violations<V: std::fmt::Display>(kind: &str, v: &[V]) -> String {
    let mut s = format!("The {kind} breaks these rules:\n");
    for x in v {
        s.push_str(&format!("- {x}\n"));
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn propose_dockerfile(
    candidate: &TaskCandidate,
    report: &RetrievalReport,
    guidance: Option<&str>,
    previous: Option<&DockerfileDraft>,
    iteration: u32,
    catalog: &BaseImageCatalog,
    client: &dyn ModelClient,
    audit: &mut AuditLog,
) -> Result<Proposal<DockerfileDraft>, ModelError> {
    let selected = previous
        .map(|p| p.python_version.clone())
        .filter(|_| report.language_version.is_none())
        .unwrap_or_else(|| select_python_version(report, catalog));
    let system = render_prompt(TemplateId::DockerfileInit, &bindings([("python_version", selected.clone())]))
        .map_err(|e| ModelError::Protocol(e.to_string()))?;
    let user = format!(
        "{}{}",
        task_context(candidate, report),
        revision_request("Dockerfile", "dockerfile", previous.map(|p| p.text.as_str()), guidance)
    );
    let messages = [Message::system(system), Message::user(user)];
    let parsed = complete_with_repair(&messages, client, TemplateId::DockerfileInit, audit, |reply| {
        let text = extract_tagged_block(reply, "dockerfile").map_err(|e| e.to_string())?;
        let v = lint_dockerfile_with(&text, catalog);
        if v.is_empty() {
            Ok(text)
        } else {
            Err(list_violations("Dockerfile", &v))
        }
    })?;
    Ok(match parsed {
        Ok(mut text) => {
            if !text.ends_with('\n') {
                text.push('\n');
            }
            let version = instructions(&text)
                .into_iter()
                .find(|i| i.keyword == "FROM")
                .and_then(|i| {
                    i.args
                        .split_whitespace()
                        .find(|w| !w.starts_with("--"))
                        .and_then(|img| catalog.version_of_image(img))
                })
                .unwrap_or(selected);
            Proposal::Ready(DockerfileDraft::new(text, version, iteration))
        }
        Err((raw, reason)) => Proposal::Failed { reason, raw },
    })
}

pub fn propose_eval_script(
    candidate: &TaskCandidate,
    report: &RetrievalReport,
    guidance: Option<&str>,
    previous: Option<&EvalScriptDraft>,
    iteration: u32,
    client: &dyn ModelClient,
    audit: &mut AuditLog,
) -> Result<Proposal<EvalScriptDraft>, ModelError> {
    let system = render_prompt(TemplateId::EvalscriptInit, &bindings([]))
        .map_err(|e| ModelError::Protocol(e.to_string()))?;
    let user = format!(
        "{}\nTest patch (substituted for the placeholder at run time):\n{}\n{}",
        task_context(candidate, report),
        candidate.test_patch,
        revision_request("script", "script", previous.map(|p| p.template_text.as_str()), guidance)
    );
    let messages = [Message::system(system), Message::user(user)];
    let parsed = complete_with_repair(&messages, client, TemplateId::EvalscriptInit, audit, |reply| {
        let text = extract_tagged_block(reply, "script").map_err(|e| e.to_string())?;
        let v = lint_eval_script(&text);
        if v.is_empty() {
            Ok(text)
        } else {
            Err(list_violations("script", &v))
        }
    })?;
    Ok(match parsed {
        Ok(mut text) => {
            if !text.ends_with('\n') {
                text.push('\n');
            }
            Proposal::Ready(EvalScriptDraft { template_text: text, iteration })
        }
        Err((raw, reason)) => Proposal::Failed { reason, raw },
    })
}
