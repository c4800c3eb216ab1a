use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::diff::{split_patch, PatchSplit};
use super::{RawPullRequest, TaskCandidate};
use crate::par::Exec;

pub const DEFAULT_MIN_STARS: u64 = 5;
pub const REQUIRED_LANGUAGE: &str = "Python";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterStage {
    RepositoryViability,
    LanguageFilter,
    IssueRequirement,
    SubstantiveChanges,
}

impl FilterStage {
    pub const ORDER: [FilterStage; 4] = [
        FilterStage::RepositoryViability,
        FilterStage::LanguageFilter,
        FilterStage::IssueRequirement,
        FilterStage::SubstantiveChanges,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterStage::RepositoryViability => "RepositoryViability",
            FilterStage::LanguageFilter => "LanguageFilter",
            FilterStage::IssueRequirement => "IssueRequirement",
            FilterStage::SubstantiveChanges => "SubstantiveChanges",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub rejected: BTreeMap<FilterStage, usize>,
    pub accepted: Vec<TaskCandidate>,
}

impl FilterReport {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

struct Evaluated<'a> {
    record: &'a RawPullRequest,
    split: Option<PatchSplit>,
}

impl Evaluated<'_> {
    fn passes(&self, stage: FilterStage, min_stars: u64) -> bool {
        let r = self.record;
        match stage {
            FilterStage::RepositoryViability => r.stars >= min_stars,
            FilterStage::LanguageFilter => r.primary_language == REQUIRED_LANGUAGE,
            FilterStage::IssueRequirement => r.issues.iter().any(|i| !i.body.trim().is_empty()),
            FilterStage::SubstantiveChanges => self
                .split
                .as_ref()
                .is_some_and(|s| !s.fix_patch.is_empty()),
        }
    }
}

/// The first stage in `order` that rejects `record`, or `None` if it passes.
pub fn first_failing_stage(
    record: &RawPullRequest,
    min_stars: u64,
    order: &[FilterStage; 4],
) -> Option<FilterStage> {
    let eval = Evaluated {
        record,
        split: split_patch(&record.patch).ok(),
    };
    order.iter().copied().find(|s| !eval.passes(*s, min_stars))
}

/// Applies the four stages in their canonical order.
pub fn filter_candidates(records: &[RawPullRequest], min_stars: u64) -> FilterReport {
    filter_candidates_with(records, min_stars, &FilterStage::ORDER, Exec::default())
}

/// Applies the stages in `order`; each rejection is attributed to the first
/// stage that fails. Accepted candidates keep input order.
pub fn filter_candidates_with(
    records: &[RawPullRequest],
    min_stars: u64,
    order: &[FilterStage; 4],
    exec: Exec,
) -> FilterReport {
    let outcomes = exec.map(records, |record| {
        let eval = Evaluated {
            record,
            split: split_patch(&record.patch).ok(),
        };
        match order.iter().copied().find(|s| !eval.passes(*s, min_stars)) {
            Some(stage) => Err(stage),
            None => Ok(to_candidate(record, eval.split.unwrap_or_default())),
        }
    });

    let mut report = FilterReport {
        input_count: records.len(),
        rejected: FilterStage::ORDER.iter().map(|s| (*s, 0)).collect(),
        accepted: Vec::new(),
    };
    for outcome in outcomes {
        match outcome {
            Ok(candidate) => report.accepted.push(candidate),
            Err(stage) => *report.rejected.entry(stage).or_default() += 1,
        }
    }
    report
}

/// Non-empty issue bodies, ordered by issue id, separated by blank lines.
fn issue_text(record: &RawPullRequest) -> String {
    let mut issues: Vec<_> = record
        .issues
        .iter()
        .filter(|i| !i.body.trim().is_empty())
        .collect();
    issues.sort_by_key(|i| i.issue_id);
    issues
        .iter()
        .map(|i| i.body.trim())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn to_candidate(record: &RawPullRequest, split: PatchSplit) -> TaskCandidate {
    TaskCandidate {
        repo_id: record.repo_id.clone(),
        pr_number: record.pr_number,
        base_commit: record.base_commit.clone(),
        issue_text: issue_text(record),
        fix_patch: split.fix_patch,
        test_patch: split.test_patch,
    }
}

#[cfg(test)]
mod tests {
    use super::super::LinkedIssue;
    use super::*;

    fn diff(path: &str) -> String {
        format!("diff --git a/{path} b/{path}\n--- a/{path}\n+++ b/{path}\n@@ -1 +1 @@\n-a\n+b\n")
    }

    fn record(stars: u64, lang: &str, body: &str, paths: &[&str]) -> RawPullRequest {
        RawPullRequest {
            repo_id: "octo/demo".into(),
            pr_number: 1,
            stars,
            primary_language: lang.into(),
            issues: vec![LinkedIssue {
                issue_id: 3,
                title: "bug".into(),
                body: body.into(),
            }],
            patch: paths.iter().map(|p| diff(p)).collect(),
            base_commit: "ab".repeat(20),
        }
    }

    #[test]
    fn four_stars_is_not_viable() {
        let r = record(4, "Python", "broken", &["src/a.py"]);
        assert_eq!(
            first_failing_stage(&r, 5, &FilterStage::ORDER),
            Some(FilterStage::RepositoryViability)
        );
    }

    #[test]
    fn test_only_patch_is_not_substantive() {
        let r = record(50, "Python", "broken", &["tests/test_a.py"]);
        assert_eq!(
            first_failing_stage(&r, 5, &FilterStage::ORDER),
            Some(FilterStage::SubstantiveChanges)
        );
    }

    #[test]
    fn whitespace_issue_body_is_empty() {
        let r = record(50, "Python", " \n\t", &["src/a.py"]);
        assert_eq!(
            first_failing_stage(&r, 5, &FilterStage::ORDER),
            Some(FilterStage::IssueRequirement)
        );
    }

    #[test]
    fn accepted_record_becomes_candidate() {
        let mut r = record(5, "Python", "it crashes", &["src/a.py", "tests/test_a.py"]);
        r.issues.insert(
            0,
            LinkedIssue {
                issue_id: 9,
                title: "later".into(),
                body: "second".into(),
            },
        );
        let report = filter_candidates(&[r], DEFAULT_MIN_STARS);
        assert_eq!(report.accepted.len(), 1);
        let c = &report.accepted[0];
        assert_eq!(c.issue_text, "it crashes\n\nsecond");
        assert_eq!(c.fix_patch, diff("src/a.py"));
        assert_eq!(c.test_patch, diff("tests/test_a.py"));
        assert_eq!(report.rejected_total(), 0);
    }

    #[test]
    fn attribution_follows_order() {
        let r = record(1, "Rust", "x", &["src/a.rs"]);
        let mut order = FilterStage::ORDER;
        order.reverse();
        let report = filter_candidates_with(&[r], 5, &order, Exec::Sequential);
        assert_eq!(report.rejected[&FilterStage::LanguageFilter], 1);
        assert_eq!(report.rejected[&FilterStage::RepositoryViability], 0);
    }
}
