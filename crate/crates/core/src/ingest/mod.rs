//! Pull-request collection and the four-stage candidate filter.

mod diff;
mod filter;
mod github;
mod store;

pub use diff::{
    is_test_path, parse_patch, split_patch, touched_paths, FilePatch, PatchError, PatchSplit,
    TEST_PATH_MARKERS,
};
pub use filter::{
    filter_candidates, filter_candidates_with, first_failing_stage, FilterReport, FilterStage,
    DEFAULT_MIN_STARS, REQUIRED_LANGUAGE,
};
pub use github::{
    FetchError, FixtureTransport, GithubCollector, HttpResponse, HttpTransport, TransportError,
    UreqTransport, DEFAULT_API_BASE,
};
pub use store::{read_candidates, write_candidates, IngestStore, StoreError};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedIssue {
    pub issue_id: u64,
    pub title: String,
    #[serde(default)]
    pub body: String,
}

/// A merged pull request as collected from the hosting API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPullRequest {
    /// `owner/name`.
    pub repo_id: String,
    pub pr_number: u64,
    pub stars: u64,
    pub primary_language: String,
    #[serde(default)]
    pub issues: Vec<LinkedIssue>,
    pub patch: String,
    pub base_commit: String,
}

impl RawPullRequest {
    /// Checks the record-level invariants: a 40-hex base commit and a
    /// parseable patch.
    pub fn validate(&self) -> Result<(), String> {
        if !is_commit_id(&self.base_commit) {
            return Err(format!("base_commit {:?} is not a 40-hex id", self.base_commit));
        }
        parse_patch(&self.patch).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// One accepted pull request, split into fix and test halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCandidate {
    pub repo_id: String,
    pub pr_number: u64,
    pub base_commit: String,
    pub issue_text: String,
    pub fix_patch: String,
    pub test_patch: String,
}

impl TaskCandidate {
    /// Stable identifier, `owner__name-<pr>`; safe as a file name.
    pub fn task_id(&self) -> String {
        format!("{}-{}", self.repo_id.replace('/', "__"), self.pr_number)
    }
}

/// Exactly 40 lowercase hex characters.
pub fn is_commit_id(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_ids() {
        assert!(is_commit_id(&"a1".repeat(20)));
        assert!(!is_commit_id(&"A1".repeat(20)));
        assert!(!is_commit_id("abc"));
    }

    #[test]
    fn task_id_is_path_safe() {
        let c = TaskCandidate {
            repo_id: "octo/demo".into(),
            pr_number: 7,
            base_commit: "0".repeat(40),
            issue_text: String::new(),
            fix_patch: String::new(),
            test_patch: String::new(),
        };
        assert_eq!(c.task_id(), "octo__demo-7");
    }
}
