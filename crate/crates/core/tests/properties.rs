//! Property tests for the pure parts of the pipeline.

use std::collections::BTreeSet;

use proptest::prelude::*;

use forge_core::curation::*;
use forge_core::explorer::{ExplorationConfig, ExplorationState};
use forge_core::harness::parse_exit_marker;
use forge_core::ingest::*;
use forge_core::par::Exec;
use forge_core::synthesis::{heredoc_body, inject_test_patch, EvalScriptDraft, HEREDOC_DELIMITER};

fn oracle_is_test(path: &str) -> bool {
    let p = path.to_lowercase();
    p.contains("test") || p.contains("spec") || p.contains("e2e")
}

fn oracle_marker(log: &str) -> Option<u64> {
    let mut found = None;
    for line in log.split('\n') {
        let line = line.trim_end_matches(|c: char| c.is_whitespace());
        if let Some(rest) = line.strip_prefix("OPENSWE_EXIT_CODE=") {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(v) = rest.parse::<u64>() {
                    found = Some(v);
                }
            }
        }
    }
    found
}

fn path_strategy() -> impl Strategy<Value = String> {
    let seg = prop::sample::select(vec!["src", "tests", "Spec", "e2e", "lib", "docs", "TESTING", "app", "x-y"]);
    let name = prop::sample::select(vec!["a.py", "test_b.py", "c_spec.rb", "d.md", "E2E.txt", "main.rs"]);
    (prop::collection::vec(seg, 0..3), name).prop_map(|(d, n)| {
        let mut parts: Vec<&str> = d;
        parts.push(n);
        parts.join("/")
    })
}

fn section(path: &str, kind: u8, n: usize) -> String {
    match kind % 3 {
        0 => format!(
            "diff --git a/{path} b/{path}\nindex 1..2 100644\n--- a/{path}\n+++ b/{path}\n@@ -1,2 +1,2 @@\n ctx{n}\n-a\n+b\n"
        ),
        1 => format!("diff --git a/{path} b/{path}\nnew file mode 100644\n--- /dev/null\n+++ b/{path}\n@@ -0,0 +1 @@\n+{n}\n"),
        _ => format!("diff --git a/{path} b/{path}\ndeleted file mode 100644\n--- a/{path}\n+++ /dev/null\n@@ -1 +0,0 @@\n-{n}\n"),
    }
}

proptest! {
    #[test]
    fn split_is_a_partition(files in prop::collection::vec((path_strategy(), any::<u8>()), 0..8)) {
        let sections: Vec<(String, String)> =
            files.iter().enumerate().map(|(n, (p, k))| (p.clone(), section(p, *k, n))).collect();
        let patch: String = sections.iter().map(|(_, s)| s.as_str()).collect();
        let parsed = parse_patch(&patch).unwrap();
        prop_assert_eq!(parsed.iter().map(|s| s.text).collect::<String>(), patch.clone());
        let split = split_patch(&patch).unwrap();
        let fix: String = sections.iter().filter(|(p, _)| !oracle_is_test(p)).map(|(_, s)| s.as_str()).collect();
        let test: String = sections.iter().filter(|(p, _)| oracle_is_test(p)).map(|(_, s)| s.as_str()).collect();
        prop_assert_eq!(split.fix_patch, fix);
        prop_assert_eq!(split.test_patch, test);
    }

    #[test]
    fn is_test_path_matches_oracle(path in "[a-zA-Z0-9_/.-]{1,40}") {
        prop_assert_eq!(is_test_path(&path), oracle_is_test(&path));
        prop_assert_eq!(is_test_path(&path), is_test_path(&path));
    }

    #[test]
    fn filter_is_order_independent_and_monotone(
        picks in prop::collection::vec((0u64..10, 0usize..3, 0usize..3, 0usize..4), 0..30),
        perm in Just(FilterStage::ORDER).prop_shuffle(),
        lo in 0u64..10,
        hi in 0u64..10,
    ) {
        let patches = [
            section("src/a.py", 0, 1) + &section("tests/test_a.py", 0, 2),
            section("tests/test_a.py", 0, 3),
            String::new(),
            "garbage\n".to_string(),
        ];
        let records: Vec<RawPullRequest> = picks.iter().enumerate().map(|(i, (stars, lang, issue, patch))| RawPullRequest {
            repo_id: "o/r".into(),
            pr_number: i as u64,
            stars: *stars,
            primary_language: ["Python", "Rust", "python"][*lang].into(),
            issues: match issue {
                0 => vec![],
                1 => vec![LinkedIssue { issue_id: 1, title: "t".into(), body: " \n".into() }],
                _ => vec![LinkedIssue { issue_id: 1, title: "t".into(), body: "bug".into() }],
            },
            patch: patches[*patch].clone(),
            base_commit: "0".repeat(40),
        }).collect();
        let perm: [FilterStage; 4] = perm;
        let canonical = filter_candidates_with(&records, 5, &FilterStage::ORDER, Exec::Sequential);
        let shuffled = filter_candidates_with(&records, 5, &perm, Exec::Parallel);
        prop_assert_eq!(&canonical.accepted, &shuffled.accepted);
        prop_assert_eq!(canonical.rejected_total() + canonical.accepted.len(), records.len());

        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let ids = |m| filter_candidates(&records, m).accepted.iter().map(|c| c.pr_number).collect::<BTreeSet<_>>();
        prop_assert!(ids(hi).is_subset(&ids(lo)));
    }

    #[test]
    fn marker_parse_matches_line_scan(lines in prop::collection::vec(
        prop_oneof![
            Just("OPENSWE_EXIT_CODE=0".to_string()),
            (0u64..300).prop_map(|n| format!("OPENSWE_EXIT_CODE={n}")),
            "[ X]?OPENSWE_EXIT_CODE=[0-9a-z -]{0,4}[ \t\r]?",
            "[a-z >]{0,12}",
        ], 0..8))
    {
        let log = lines.join("\n");
        prop_assert_eq!(parse_exit_marker(&log), oracle_marker(&log));
    }

    #[test]
    fn injected_patch_round_trips(body in prop::collection::vec("[ -~]{0,30}", 0..10)) {
        let patch: String = body.iter().map(|l| format!("{l}\n")).collect();
        prop_assume!(!patch.contains(HEREDOC_DELIMITER));
        let draft = EvalScriptDraft { template_text: forge_core::fixtures::EVAL_SCRIPT.to_string(), iteration: 1 };
        let script = inject_test_patch(&draft, &patch).unwrap();
        prop_assert_eq!(heredoc_body(&script, HEREDOC_DELIMITER).unwrap(), patch);
    }
}

fn rollout_strategy() -> impl Strategy<Value = Vec<RolloutRecord>> {
    let task = (0usize..6, 0usize..2, prop::collection::vec(any::<bool>(), 0..=4), any::<bool>());
    prop::collection::vec(task, 0..8).prop_map(|tasks| {
        let mut out = Vec::new();
        for (t, scaffold, outcomes, pull) in tasks {
            for (i, resolved) in outcomes.iter().enumerate() {
                let mut steps = vec![Step { action: "ls".into(), observation: "a".into(), mask: false }];
                if pull && i == 0 {
                    steps.push(Step { action: "git pull".into(), observation: String::new(), mask: false });
                }
                out.push(RolloutRecord {
                    task_id: format!("t{t}"),
                    attempt_index: i as u32 + 1,
                    resolved: *resolved,
                    trajectory: Trajectory { steps, terminal_resolved: *resolved },
                    scaffold: format!("s{scaffold}"),
                    sampling: SamplingConfig::default(),
                });
            }
        }
        // Keep the first occurrence of each (task, scaffold, attempt).
        let mut seen = BTreeSet::new();
        out.retain(|r| seen.insert((r.task_id.clone(), r.scaffold.clone(), r.attempt_index)));
        out
    })
}

proptest! {
    #[test]
    fn selection_equals_enumeration(rollouts in rollout_strategy(), keep in prop::collection::btree_set(0u32..=4, 0..4)) {
        let cfg = CurationConfig { keep_pass_counts: keep.clone(), ..Default::default() };
        let counts = aggregate_pass_counts(&rollouts, &cfg).unwrap();
        let kept = select_instances(&counts, &cfg);
        let mut expected = BTreeSet::new();
        let tasks: BTreeSet<_> = rollouts.iter().map(|r| r.task_id.clone()).collect();
        for t in &tasks {
            for s in ["s0", "s1"] {
                let attempts: Vec<_> = rollouts.iter().filter(|r| &r.task_id == t && r.scaffold == s).collect();
                let passes = attempts.iter().filter(|r| r.resolved).count() as u32;
                if attempts.len() == 4 && keep.contains(&passes) {
                    expected.insert(t.clone());
                }
            }
        }
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn export_conserves_trajectories(rollouts in rollout_strategy()) {
        let cfg = CurationConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("train.jsonl");
        let counts = aggregate_pass_counts(&rollouts, &cfg).unwrap();
        let kept = select_instances(&counts, &cfg);
        let report = export_training_set(&rollouts, &kept, &cfg, &out, Exec::default()).unwrap();
        let expected = rollouts
            .iter()
            .filter(|r| r.resolved && kept.contains(&r.task_id) && !r.trajectory.steps.iter().any(|s| s.action.contains("git pull")))
            .count();
        let written: Vec<TrainingRecord> =
            std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(written.len(), expected);
        prop_assert_eq!(report.trajectories_out, expected);
        prop_assert!(written.iter().all(|r| kept.contains(&r.task_id)));
    }

    #[test]
    fn sanitize_is_idempotent(steps in prop::collection::vec(
        (prop::sample::select(vec!["ls", "git pull", "git pull origin", "Git Pull", "pytest"]),
         prop::sample::select(vec!["ok", "Your output was not formatted correctly", "Unknown tool: x", ""]),
         any::<bool>()), 0..10))
    {
        let cfg = CurationConfig::default();
        let t = Trajectory {
            steps: steps.iter().map(|(a, o, m)| Step { action: a.to_string(), observation: o.to_string(), mask: *m }).collect(),
            terminal_resolved: true,
        };
        let once = sanitize_trajectory(&t, &cfg);
        if let Some(s) = &once {
            let twice = sanitize_trajectory(s, &cfg);
            prop_assert_eq!(twice.as_ref(), Some(s));
            prop_assert_eq!(s.steps.len(), t.steps.len());
            for (a, b) in s.steps.iter().zip(&t.steps) {
                prop_assert_eq!((&a.action, &a.observation), (&b.action, &b.observation));
            }
        } else {
            prop_assert!(t.steps.iter().any(|s| s.action.contains("git pull")));
        }
    }
}

#[test]
fn sandbox_never_escapes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("repo");
    std::fs::create_dir_all(root.join("src/inner")).unwrap();
    std::fs::write(root.join("src/a.py"), "inside").unwrap();
    std::fs::write(dir.path().join("secret.txt"), "outside").unwrap();
    std::os::unix::fs::symlink(dir.path(), root.join("up")).unwrap();
    std::os::unix::fs::symlink(dir.path().join("secret.txt"), root.join("src/leak.py")).unwrap();
    let canonical_root = root.canonicalize().unwrap();
    let tokens = ["..", ".", "src", "inner", "up", "secret.txt", "leak.py", "a.py", "", "/", "/etc", "/tmp"];
    let mut runner = proptest::test_runner::TestRunner::default();
    runner
        .run(&prop::collection::vec(prop::sample::select(tokens.to_vec()), 0..6), |parts| {
            let mut state = ExplorationState::new(&root, &ExplorationConfig::default(), None).unwrap();
            let path = parts.join("/");
            if let Ok(p) = state.resolve(&path) {
                prop_assert!(p.starts_with(&canonical_root), "{path} resolved to {}", p.display());
            }
            if let Ok(text) = state.digest(&path) {
                prop_assert!(!text.contains("outside"));
            }
            let _ = state.browse(&path);
            Ok(())
        })
        .unwrap();
}
