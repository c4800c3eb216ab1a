//! Dockerfile and evaluation-script synthesis.

mod inject;
mod lint;
mod propose;
mod provision;
pub mod shell;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::explorer::RetrievalReport;
use crate::fsutil::sha256_hex;

pub use inject::{inject_test_patch, InjectError};
pub use lint::{
    find_hardcoded_markers, heredoc_body, heredocs, instructions, lint_dockerfile, lint_dockerfile_with,
    lint_eval_script, stable_prefix, DockerfileViolation, Heredoc, Instruction, ScriptViolation, END_MARKER,
    EXIT_MARKER_PREFIX, HEREDOC_DELIMITER, START_MARKER, TEST_PATCH_PLACEHOLDER,
};
pub use propose::{propose_dockerfile, propose_eval_script, Proposal};
pub use provision::{ProvisionError, RepoCache, RepoSource};

pub const BASE_IMAGE_OVERRIDE_MARKER: &str = "# openswe: base-image-override";

/// Python versions with a prebuilt base image, oldest first.
pub const ALLOWED_PYTHON_VERSIONS: [&str; 11] =
    ["2.7", "3.5", "3.6", "3.7", "3.8", "3.9", "3.10", "3.11", "3.12", "3.13", "3.14"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DockerfileDraft {
    pub text: String,
    pub python_version: String,
    pub iteration: u32,
    pub content_hash: String,
}

impl DockerfileDraft {
    pub fn new(text: String, python_version: String, iteration: u32) -> Self {
        let content_hash = sha256_hex(text.as_bytes());
        Self { text, python_version, iteration, content_hash }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalScriptDraft {
    pub template_text: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseImageCatalog {
    pub entries: BTreeMap<String, String>,
    /// Package mirror configuration baked into the base images. Deployment
    /// specific; empty means the upstream indexes.
    pub mirror_config: String,
}

impl BaseImageCatalog {
    pub fn standard() -> Self {
        Self {
            entries: ALLOWED_PYTHON_VERSIONS
                .iter()
                .map(|v| (v.to_string(), Self::tag_for(v)))
                .collect(),
            mirror_config: String::new(),
        }
    }

    pub fn tag_for(version: &str) -> String {
        format!("openswe-python-{version}")
    }

    pub fn versions(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, version: &str) -> bool {
        self.entries.contains_key(version)
    }

    /// Versions in ascending numeric order.
    pub fn sorted_versions(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.versions().collect();
        v.sort_by(|a, b| cmp_version(a, b));
        v
    }

    /// Python version of a standard base image reference, if any.
    pub fn version_of_image(&self, image: &str) -> Option<String> {
        let last = image.rsplit('/').next().unwrap_or(image);
        let name = last.split([':', '@']).next().unwrap_or(last);
        let v = name.strip_prefix("openswe-python-")?;
        self.contains(v).then(|| v.to_string())
    }
}

impl Default for BaseImageCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

fn parse_version(v: &str) -> Option<Vec<u32>> {
    let v = v.trim().trim_start_matches(['v', 'V']);
    let parts: Option<Vec<u32>> = v.split('.').filter(|p| *p != "*").map(|p| p.parse().ok()).collect();
    parts.filter(|p| !p.is_empty())
}

fn cmp_version(a: &str, b: &str) -> Ordering {
    parse_version(a).cmp(&parse_version(b))
}

/// One clause of a version specifier such as `>=3.8`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Clause {
    op: String,
    version: Vec<u32>,
}

impl Clause {
    /// Evaluated on major.minor, so `<3.12` excludes 3.12 and `>=3.8.1`
    /// still admits 3.8.
    fn admits(&self, candidate: &[u32]) -> bool {
        let want: Vec<u32> = self.version.iter().take(2).copied().collect();
        let have: Vec<u32> = candidate.iter().take(want.len()).copied().collect();
        let ord = have.cmp(&want);
        match self.op.as_str() {
            ">=" | "~=" => ord != Ordering::Less,
            ">" => ord == Ordering::Greater || (ord == Ordering::Equal && self.version.len() > 2),
            "<=" => ord != Ordering::Greater,
            "<" => ord == Ordering::Less,
            "!=" => self.version.len() > 2 || ord != Ordering::Equal,
            _ => ord == Ordering::Equal,
        }
    }
}

fn parse_constraint(spec: &str) -> Option<Vec<Clause>> {
    let mut clauses = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let split = part.find(|c: char| c.is_ascii_digit())?;
        let (op, ver) = part.split_at(split);
        let op = match op.trim() {
            "" | "=" | "==" | "^" => "==",
            o @ (">=" | ">" | "<=" | "<" | "!=" | "~=") => o,
            _ => return None,
        };
        clauses.push(Clause { op: op.to_string(), version: parse_version(ver)? });
    }
    (!clauses.is_empty()).then_some(clauses)
}

/// Pulls Python version constraints out of the report: the language
/// version field plus any `python...` entry among the dependency pins.
fn python_constraints(report: &RetrievalReport) -> Vec<Vec<Clause>> {
    let mut specs: Vec<String> = Vec::new();
    if let Some(v) = &report.language_version {
        let v = v.trim();
        let v = v.strip_prefix("python").or_else(|| v.strip_prefix("Python")).unwrap_or(v);
        specs.push(v.trim().to_string());
    }
    for pin in &report.dependency_pins {
        let lower = pin.to_ascii_lowercase();
        let Some(key) = ["requires-python", "python_requires", "python"].into_iter().find(|k| lower.starts_with(k))
        else {
            continue;
        };
        let rest: String = lower[key.len()..].chars().filter(|c| !c.is_whitespace() && !"'\"".contains(*c)).collect();
        let rest = rest.trim_start_matches(':');
        let rest = match rest.strip_prefix('=') {
            Some(r) if r.starts_with(['<', '>', '!', '~', '=']) => r,
            _ => rest,
        };
        if rest.starts_with(|c: char| c.is_ascii_digit() || "<>=!~^".contains(c)) {
            specs.push(rest.to_string());
        }
    }
    specs.iter().filter_map(|s| parse_constraint(s)).collect()
}

/// Picks the base image Python version: the highest catalog version that
/// satisfies every constraint found in the report. Falls back to ignoring
/// the constraints when nothing satisfies all of them.
pub fn select_python_version(report: &RetrievalReport, catalog: &BaseImageCatalog) -> String {
    let versions = catalog.sorted_versions();
    let constraints = python_constraints(report);
    let fits = |v: &&&str| {
        let parsed = parse_version(v).unwrap_or_default();
        constraints.iter().all(|c| c.iter().all(|cl| cl.admits(&parsed)))
    };
    versions
        .iter()
        .rev()
        .find(fits)
        .or_else(|| versions.last())
        .map(|v| v.to_string())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(lang: Option<&str>, pins: &[&str]) -> RetrievalReport {
        RetrievalReport {
            language_version: lang.map(str::to_string),
            dependency_pins: pins.iter().map(|p| p.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn catalog_covers_allowed_set() {
        let c = BaseImageCatalog::standard();
        assert_eq!(c.entries.len(), 11);
        assert_eq!(c.entries["3.12"], "openswe-python-3.12");
        assert_eq!(c.sorted_versions().first(), Some(&"2.7"));
        assert_eq!(c.sorted_versions().last(), Some(&"3.14"));
        assert_eq!(c.version_of_image("openswe-python-3.9:latest").as_deref(), Some("3.9"));
        assert_eq!(c.version_of_image("openswe-python-3.4"), None);
    }

    #[test]
    fn version_selection() {
        let c = BaseImageCatalog::standard();
        let pick = |lang, pins: &[&str]| select_python_version(&report(lang, pins), &c);
        assert_eq!(pick(None, &[]), "3.14");
        assert_eq!(pick(Some("3.9"), &[]), "3.9");
        assert_eq!(pick(Some("3.10.4"), &[]), "3.10");
        assert_eq!(pick(Some(">=3.8,<3.12"), &[]), "3.11");
        assert_eq!(pick(Some("python3.7"), &[]), "3.7");
        assert_eq!(pick(None, &["requires-python >=3.6, <3.10"]), "3.9");
        assert_eq!(pick(None, &["python_requires='>=2.7,<3'"]), "2.7");
        assert_eq!(pick(Some("3.3"), &[]), "3.14");
        assert_eq!(pick(None, &["numpy==1.21"]), "3.14");
    }

    #[test]
    fn draft_hash_tracks_text() {
        let a = DockerfileDraft::new("FROM a\n".into(), "3.9".into(), 1);
        let b = DockerfileDraft::new("FROM a\n".into(), "3.9".into(), 2);
        let c = DockerfileDraft::new("FROM b\n".into(), "3.9".into(), 1);
        assert_eq!(a.content_hash, b.content_hash);
        assert_ne!(a.content_hash, c.content_hash);
    }
}
