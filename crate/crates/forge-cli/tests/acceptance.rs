//! Acceptance criteria for the whole pipeline. Runs without the libtest
//! harness and prints one PASS or FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use forge_core::curation::*;
use forge_core::fixtures::*;
use forge_core::fleet::{Lease, Queue, QueueState};
use forge_core::fsutil::now_millis;
use forge_core::harness::{
    parse_exit_marker, validate_instance, ImageCache, LocalEngine, RecordingEngine, RunLimits, ValidationOptions,
    VerdictStatus,
};
use forge_core::ingest::{
    filter_candidates, filter_candidates_with, first_failing_stage, parse_patch, split_patch, write_candidates,
    FilterStage, TaskCandidate, DEFAULT_MIN_STARS,
};
use forge_core::modelio::{AuditLog, ScriptedClient, TemplateId, Transcript};
use forge_core::orchestrator::{run_task_loop, LoopConfig, LoopDeps, TaskRecord, TaskStatus};
use forge_core::par::Exec;
use forge_core::synthesis::{
    find_hardcoded_markers, lint_eval_script, DockerfileDraft, EvalScriptDraft, RepoCache, RepoSource, ScriptViolation,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(started: Instant, limit: Duration, detail: String) -> Outcome {
    let took = started.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}; {detail}");
    Ok(format!("{detail}; {took:.2?}"))
}

fn all_orders() -> Vec<[FilterStage; 4]> {
    let s = FilterStage::ORDER;
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let idx = [a, b, c, d];
                    if idx.iter().collect::<BTreeSet<_>>().len() == 4 {
                        out.push(idx.map(|i| s[i]));
                    }
                }
            }
        }
    }
    out
}

fn filter_fidelity() -> Outcome {
    use FilterStage::*;
    let started = Instant::now();
    let corpus = pr_corpus();
    let expected_accept: BTreeSet<u64> = [1, 8, 12, 13, 15, 17, 20].into();
    let expected_stage: BTreeMap<u64, FilterStage> = [
        (2, RepositoryViability),
        (3, RepositoryViability),
        (18, RepositoryViability),
        (4, LanguageFilter),
        (5, LanguageFilter),
        (19, LanguageFilter),
        (6, IssueRequirement),
        (7, IssueRequirement),
        (9, SubstantiveChanges),
        (10, SubstantiveChanges),
        (11, SubstantiveChanges),
        (14, SubstantiveChanges),
        (16, SubstantiveChanges),
    ]
    .into();

    let report = filter_candidates(&corpus, DEFAULT_MIN_STARS);
    let accepted: BTreeSet<u64> = report.accepted.iter().map(|c| c.pr_number).collect();
    ensure!(accepted == expected_accept, "accepted {accepted:?}, expected {expected_accept:?}");
    for r in &corpus {
        let got = first_failing_stage(r, DEFAULT_MIN_STARS, &FilterStage::ORDER);
        ensure!(got == expected_stage.get(&r.pr_number).copied(), "PR {} stopped at {got:?}", r.pr_number);
    }
    for stage in FilterStage::ORDER {
        let want = expected_stage.values().filter(|s| **s == stage).count();
        ensure!(report.rejected[&stage] == want, "{} rejected {}, expected {want}", stage.name(), report.rejected[&stage]);
    }
    let orders = all_orders();
    for order in &orders {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let r = filter_candidates_with(&corpus, DEFAULT_MIN_STARS, order, exec);
            let set: BTreeSet<u64> = r.accepted.iter().map(|c| c.pr_number).collect();
            ensure!(set == expected_accept, "order {order:?} accepted {set:?}");
            ensure!(r.accepted == report.accepted, "order {order:?} changed the accepted candidates");
        }
    }
    within(
        started,
        Duration::from_secs(1),
        format!("{} records, {} accepted, {} stage orders agree", corpus.len(), accepted.len(), orders.len()),
    )
}

fn oracle_is_test(path: &str) -> bool {
    let p = path.to_lowercase();
    ["test", "spec", "e2e"].iter().any(|m| p.contains(m))
}

fn patch_partition() -> Outcome {
    let started = Instant::now();
    let mut files = 0;
    for i in 0..200 {
        let (diff, paths) = generated_diff(i);
        let sections = parse_patch(&diff).map_err(|e| format!("diff {i}: {e}"))?;
        ensure!(sections.len() == paths.len(), "diff {i}: {} sections for {} files", sections.len(), paths.len());
        let joined: String = sections.iter().map(|s| s.text).collect();
        ensure!(joined == diff, "diff {i}: sections do not concatenate to the input");

        let split = split_patch(&diff).map_err(|e| format!("diff {i}: {e}"))?;
        let (mut fix, mut test) = (String::new(), String::new());
        for (s, path) in sections.iter().zip(&paths) {
            ensure!(s.route_path() == path, "diff {i}: routed {} for {path}", s.route_path());
            if oracle_is_test(path) { &mut test } else { &mut fix }.push_str(s.text);
        }
        ensure!(split.fix_patch == fix && split.test_patch == test, "diff {i}: routing differs from the oracle");

        // Put the halves back together in file order.
        let (mut f, mut t) = (split.fix_patch.as_str(), split.test_patch.as_str());
        let mut rebuilt = String::new();
        for s in &sections {
            let half = if oracle_is_test(s.route_path()) { &mut t } else { &mut f };
            ensure!(half.starts_with(s.text), "diff {i}: halves out of order");
            rebuilt.push_str(&half[..s.text.len()]);
            *half = &half[s.text.len()..];
        }
        ensure!(rebuilt == diff && f.is_empty() && t.is_empty(), "diff {i}: rebuilt patch differs");
        files += paths.len();
    }
    within(started, Duration::from_secs(5), format!("200 diffs, {files} file sections byte-identical"))
}

/// A script in the documented layout: multi-line test command and
/// trailing comments on the capture and report lines.
const EXAMPLE_SCRIPT: &str = r#"#!/bin/bash
source /opt/miniconda3/bin/activate
conda activate testbed
cd /testbed

git apply -v --allow-empty - <<'EOF_114329324912'
[CONTENT OF TEST PATCH]
EOF_114329324912

echo ">>>>> Start Test Output"
pytest -rA --tb=short \
    tests/test_ops.py::test_add \
    tests/test_ops.py::test_sub
rc=$? # keep the test status
echo ">>>>> End Test Output"
echo "OPENSWE_EXIT_CODE=$rc" # read by the harness
"#;

fn script_contract() -> Outcome {
    use ScriptViolation::*;
    let v = lint_eval_script(EXAMPLE_SCRIPT);
    ensure!(v.is_empty(), "example script: {v:?}");
    let v = lint_eval_script(EVAL_SCRIPT);
    ensure!(v.is_empty(), "fixture script: {v:?}");

    let line_of = |script: &str, needle: &str| script.lines().position(|l| l.contains(needle)).map(|i| i + 1);
    let mutants = script_mutants();
    ensure!(mutants.len() >= 10, "only {} mutants", mutants.len());
    for (label, script) in &mutants {
        let expected = match *label {
            "no start marker" => MissingStartMarker,
            "no end marker" => MissingEndMarker,
            "markers swapped" => MarkersOutOfOrder,
            "no rc capture" => MissingRcCapture,
            "no exit echo" => MissingExitEcho,
            "no placeholder" => PlaceholderCount { found: 0 },
            "two placeholders" => PlaceholderCount { found: 2 },
            "placeholder outside heredoc" => PlaceholderOutsideHeredoc,
            "set -e" | "set -euo pipefail" => Errexit { line: line_of(script, "set -e").unwrap_or(0) },
            "errexit shebang" => Errexit { line: 1 },
            other => return Err(format!("unknown mutant {other:?}")),
        };
        let got = lint_eval_script(script);
        ensure!(got == vec![expected.clone()], "{label}: got {got:?}, expected [{expected:?}]");
    }
    Ok(format!("example clean, {} mutants each flagged once", mutants.len()))
}

fn oracle_marker(log: &str) -> Option<u64> {
    let mut found = None;
    for line in log.split('\n') {
        let line = line.trim_end();
        if let Some(digits) = line.strip_prefix("OPENSWE_EXIT_CODE=") {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(v) = digits.parse() {
                    found = Some(v);
                }
            }
        }
    }
    found
}

fn marker_parsing() -> Outcome {
    let logs = marker_logs();
    ensure!(logs.len() >= 50, "only {} logs", logs.len());
    let mut some = 0;
    for log in &logs {
        let (got, want) = (parse_exit_marker(log), oracle_marker(log));
        ensure!(got == want, "log {log:?}: parsed {got:?}, oracle {want:?}");
        some += want.is_some() as usize;
    }
    Ok(format!("{} logs agree, {some} carry a marker", logs.len()))
}

struct Fixture {
    tmp: tempfile::TempDir,
    engine: RecordingEngine<LocalEngine>,
    task: SeededTask,
}

fn fixture() -> Result<Fixture, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let engine = LocalEngine::new(tmp.path().join("engine")).map_err(|e| format!("no local engine: {e}"))?;
    let task = seeded_task(&tmp.path().join("upstream")).map_err(|e| e.to_string())?;
    Ok(Fixture { tmp, engine: RecordingEngine::new(engine), task })
}

fn limits() -> RunLimits {
    RunLimits { wall_clock_timeout: Duration::from_secs(120), ..RunLimits::default() }
}

impl Fixture {
    fn repos(&self) -> RepoCache {
        RepoCache::new(self.tmp.path().join("bare"), RepoSource::LocalDir(self.task.upstream_root.clone()))
    }

    fn run(&self, transcript: Transcript, max_iterations: u32) -> (TaskRecord, ScriptedClient) {
        let client = ScriptedClient::new(transcript);
        let images = ImageCache::in_memory();
        let repos = self.repos();
        let mut config = LoopConfig::new(self.tmp.path().join("work"));
        config.max_iterations = max_iterations;
        config.validation.limits = limits();
        let deps = LoopDeps { client: &client, engine: &self.engine, images: &images, repos: &repos };
        let mut audit = AuditLog::in_memory();
        let record = run_task_loop(&self.task.candidate, &deps, &config, &mut audit);
        (record, client)
    }
}

fn dual_condition() -> Outcome {
    let started = Instant::now();
    let fx = fixture()?;
    let ctx = fx.tmp.path().join("ctx");
    fx.repos().provision(&fx.task.candidate, &ctx).map_err(|e| e.to_string())?;
    let cache = ImageCache::in_memory();
    let df = DockerfileDraft::new(DOCKERFILE.into(), "3.11".into(), 1);
    let script = EvalScriptDraft { template_text: EVAL_SCRIPT.into(), iteration: 1 };
    let opts = ValidationOptions { limits: limits(), ..Default::default() };

    let mut withheld = fx.task.candidate.clone();
    withheld.fix_patch = String::new();
    let mut wrong = fx.task.candidate.clone();
    wrong.fix_patch = fx.task.wrong_fix.clone();
    let mut vacuous = fx.task.candidate.clone();
    vacuous.test_patch = fx.task.passing_test_patch.clone();
    let cases = [
        ("seeded", &fx.task.candidate, VerdictStatus::Accepted),
        ("fix withheld", &withheld, VerdictStatus::RejectedFixFails),
        ("wrong fix", &wrong, VerdictStatus::RejectedFixFails),
        ("vacuous test", &vacuous, VerdictStatus::RejectedNoFail),
    ];
    for (label, candidate, want) in cases {
        let v = validate_instance(&fx.engine, &cache, &ctx, candidate, &df, &script, &opts).map_err(|e| e.to_string())?;
        ensure!(v.status == want, "{label}: {:?}, expected {want:?}", v.status);
    }
    within(started, Duration::from_secs(180), "accepted, withheld and wrong fixes fail, vacuous test rejected".into())
}

fn script_only_run() -> Transcript {
    use TemplateId::*;
    let mut t = Transcript::default();
    t.push(Exploration, explore_finish_reply())
        .push(DockerfileInit, dockerfile_reply(DOCKERFILE))
        .push(EvalscriptInit, script_reply(&broken_eval_script()))
        .push(Analysis, analysis_reply(false, "", "tests/test_missing.py does not exist", ""))
        .push(EvalscriptInit, script_reply(&EVAL_SCRIPT.replace("tests/test_ops.py", "tests/test_other.py")))
        .push(Analysis, analysis_reply(false, "", "tests/test_other.py does not exist either", ""))
        .push(EvalscriptInit, script_reply(EVAL_SCRIPT))
        .push(Analysis, analysis_reply(true, "", "", ""));
    t
}

fn dockerfile_change_run() -> Transcript {
    use TemplateId::*;
    let mut t = Transcript::default();
    t.push(Exploration, explore_finish_reply())
        .push(DockerfileInit, dockerfile_reply(DOCKERFILE))
        .push(EvalscriptInit, script_reply(&broken_eval_script()))
        .push(Analysis, analysis_reply(false, "print the version with python -V", "", ""))
        .push(DockerfileInit, dockerfile_reply(&DOCKERFILE.replace("python --version", "python -V")))
        .push(Analysis, analysis_reply(false, "", "run tests/test_ops.py", ""))
        .push(EvalscriptInit, script_reply(EVAL_SCRIPT))
        .push(Analysis, analysis_reply(true, "", "", ""));
    t
}

fn cache_contract() -> Outcome {
    let fx = fixture()?;
    let (a, _) = fx.run(script_only_run(), 3);
    let builds_a = fx.engine.count("build");
    ensure!(a.final_status == TaskStatus::Accepted, "script-only run ended {:?}", a.final_status);
    ensure!(a.iteration_count == 3, "script-only run took {} iterations", a.iteration_count);
    ensure!(builds_a == 1, "script-only run built {builds_a} times");

    let fx = fixture()?;
    let (b, _) = fx.run(dockerfile_change_run(), 3);
    let builds_b = fx.engine.count("build");
    ensure!(b.final_status == TaskStatus::Accepted, "Dockerfile run ended {:?}", b.final_status);
    ensure!(builds_b == 2, "Dockerfile run built {builds_b} times");
    Ok(format!("3 iterations: {builds_a} build with script changes, {builds_b} with a Dockerfile change"))
}

fn end_to_end() -> Outcome {
    let fx = fixture()?;
    let mut seen = Vec::new();
    for (name, transcript) in [("happy", happy_transcript()), ("script fix", script_fix_transcript())] {
        let (r, client) = fx.run(transcript, 2);
        ensure!(r.final_status == TaskStatus::Accepted && r.is_certified(), "{name}: {:?}", r.final_status);
        ensure!(r.iteration_count <= 2, "{name}: {} iterations", r.iteration_count);
        ensure!(client.remaining() == 0, "{name}: {} scripted replies unused", client.remaining());
        seen.push(format!("{name} in {}", r.iteration_count));
    }
    // The scripted client has no transport, so no model endpoint is contacted.
    Ok(format!("accepted ({}) from scripted replies only", seen.join(", ")))
}

fn legitimacy_gate() -> Outcome {
    let literal = format!("{EVAL_SCRIPT}echo \"OPENSWE_EXIT_CODE=0\"\n");
    ensure!(!find_hardcoded_markers(&literal).is_empty(), "literal marker not detected");
    ensure!(find_hardcoded_markers(EVAL_SCRIPT).is_empty(), "honest script flagged");

    let fx = fixture()?;
    for (name, script) in [("literal echo", literal), ("conditional echo", cheating_eval_script())] {
        let mut t = Transcript::default();
        t.push(TemplateId::Exploration, explore_finish_reply())
            .push(TemplateId::DockerfileInit, dockerfile_reply(DOCKERFILE))
            .push(TemplateId::EvalscriptInit, script_reply(&script));
        for _ in 0..2 {
            t.push(TemplateId::Analysis, analysis_reply(true, "", "", ""));
            t.push(TemplateId::EvalscriptInit, script_reply(&script));
        }
        let (r, _) = fx.run(t, 2);
        ensure!(r.final_status != TaskStatus::Accepted, "{name}: accepted");
        ensure!(!r.is_certified(), "{name}: certified");
        ensure!(!r.hardcoded_marker_lines.is_empty(), "{name}: no hardcoded lines recorded");
        if name == "conditional echo" {
            let verdict = r.verdict.as_ref().map(|v| v.status);
            ensure!(verdict == Some(VerdictStatus::Accepted), "{name}: both runs should pass, got {verdict:?}");
        }
    }
    Ok("literal and conditional marker echoes blocked".into())
}

fn spawn_worker(bin: &str, queue: &Path, id: &str, delay_ms: u64) -> std::io::Result<Child> {
    Command::new(bin)
        .args(["worker", "--id", id, "--queue"])
        .arg(queue)
        .args(["--noop-delay-ms", &delay_ms.to_string()])
        .args(["--lease-ttl-secs", "3", "--reap-interval-secs", "1", "--poll-ms", "50", "--exit-when-drained"])
        .env("RUST_LOG", "error")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
}

/// Samples live leases and checks that no task is ever held twice.
fn watch_leases(queue: Queue, stop: Arc<AtomicBool>, violations: Arc<Mutex<Vec<String>>>) -> usize {
    let mut last: HashMap<String, Lease> = HashMap::new();
    let mut samples = 0;
    while !stop.load(Ordering::Relaxed) {
        let now = now_millis();
        let leases = queue.live_leases(now).unwrap_or_default();
        let mut held: BTreeMap<&str, usize> = BTreeMap::new();
        for l in &leases {
            *held.entry(&l.task_id).or_default() += 1;
        }
        let mut bad = violations.lock().unwrap();
        for (task, n) in held.iter().filter(|(_, n)| **n > 1) {
            bad.push(format!("{task} held {n} times at {now}"));
        }
        // A new holder may only appear after the previous lease ran out.
        for l in leases {
            if let Some(prev) = last.get(&l.task_id) {
                if prev.token != l.token && prev.expires_at() > l.acquired_at {
                    bad.push(format!(
                        "{} taken by {} at {} while {}'s lease ran to {}",
                        l.task_id,
                        l.worker_id,
                        l.acquired_at,
                        prev.worker_id,
                        prev.expires_at()
                    ));
                }
            }
            last.insert(l.task_id.clone(), l);
        }
        drop(bad);
        samples += 1;
        std::thread::sleep(Duration::from_millis(5));
    }
    samples
}

fn queue_chaos() -> Outcome {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_forge");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path().join("queue");
    let candidates: Vec<TaskCandidate> = (0..100)
        .map(|i| TaskCandidate {
            repo_id: "chaos/noop".into(),
            pr_number: i + 1,
            base_commit: format!("{:040x}", i + 1),
            issue_text: format!("task {i}"),
            fix_patch: String::new(),
            test_patch: String::new(),
        })
        .collect();
    let file = tmp.path().join("candidates.jsonl");
    write_candidates(&file, &candidates).map_err(|e| e.to_string())?;
    let status = Command::new(bin)
        .args(["enqueue", "--queue"])
        .arg(&root)
        .arg("--candidates")
        .arg(&file)
        .stdout(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "enqueue exited with {status}");
    let queue = Queue::open(&root).map_err(|e| e.to_string())?;
    ensure!(queue.counts().map_err(|e| e.to_string())?.pending == 100, "enqueue did not add 100 tasks");

    let stop = Arc::new(AtomicBool::new(false));
    let violations = Arc::new(Mutex::new(Vec::new()));
    let watcher = {
        let (q, stop, v) = (Queue::open(&root).map_err(|e| e.to_string())?, stop.clone(), violations.clone());
        std::thread::spawn(move || watch_leases(q, stop, v))
    };

    // The victim sleeps long enough per task to be killed while holding one.
    let mut victim = spawn_worker(bin, &root, "w0", 2000).map_err(|e| e.to_string())?;
    let mut workers = Vec::new();
    for id in ["w1", "w2", "w3"] {
        workers.push(spawn_worker(bin, &root, id, 100).map_err(|e| e.to_string())?);
    }
    let victim_lease = loop {
        if let Some(l) = queue.live_leases(now_millis()).unwrap_or_default().into_iter().find(|l| l.worker_id == "w0") {
            break l;
        }
        if started.elapsed() > Duration::from_secs(30) {
            let _ = victim.kill();
            return Err("victim never leased a task".into());
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    victim.kill().map_err(|e| e.to_string())?;
    let _ = victim.wait();
    let orphan = victim_lease.task_id.clone();
    ensure!(queue.state_of(&orphan) == Some(QueueState::Leased), "victim's task {orphan} was not leased at the kill");

    let mut completed = 0u64;
    for w in workers {
        let out = w.wait_with_output().map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "worker exited with {}", out.status);
        let summary: serde_json::Value =
            serde_json::from_slice(&out.stdout).map_err(|e| format!("worker summary: {e}"))?;
        completed += summary["completed"].as_u64().unwrap_or(0);
    }
    stop.store(true, Ordering::Relaxed);
    let samples = watcher.join().map_err(|_| "lease watcher panicked".to_string())?;

    let bad = violations.lock().unwrap().clone();
    ensure!(bad.is_empty(), "{} lease violations, first: {}", bad.len(), bad[0]);
    let counts = queue.counts().map_err(|e| e.to_string())?;
    ensure!(
        counts.done == 100 && counts.pending == 0 && counts.leased == 0 && counts.parked == 0,
        "final counts {counts:?}"
    );
    let done_files = std::fs::read_dir(root.join("done")).map_err(|e| e.to_string())?.count();
    ensure!(done_files == 100, "{done_files} files in done/");
    ensure!(completed == 100, "workers recorded {completed} completions");
    for c in &candidates {
        let id = c.task_id();
        let entry = queue.done_entry(&id).map_err(|e| format!("{id}: {e}"))?;
        ensure!(entry.task.task_id == id && entry.worker_id != "w0", "{id}: completed by {}", entry.worker_id);
    }
    within(
        started,
        Duration::from_secs(120),
        format!("100/100 done once each, {orphan} recovered after the kill, {samples} lease samples clean"),
    )
}

fn rollout_set() -> impl Strategy<Value = Vec<RolloutRecord>> {
    let action = prop::sample::select(vec!["ls", "cat setup.py", "git pull", "cd src && git pull --rebase", "git log", "pytest"]);
    let observation = prop::sample::select(vec![
        "ok",
        "Unknown tool: grep2",
        "Command timed out",
        "collected 3 items",
        "Your output was not formatted correctly",
    ]);
    let step = (action, observation, prop::bool::weighted(0.1))
        .prop_map(|(a, o, m)| Step { action: a.into(), observation: o.into(), mask: m });
    let attempt = (prop::bool::ANY, prop::collection::vec(step, 0..6), 2u32..7);
    // (task, scaffold) → attempts present, each resolved or not.
    let group = (0usize..5, 0usize..2, prop::collection::vec(prop::option::weighted(0.85, attempt), 4));
    prop::collection::vec(group, 0..10).prop_map(|groups| {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (task, scaffold, attempts) in groups {
            if !seen.insert((task, scaffold)) {
                continue;
            }
            for (k, a) in attempts.into_iter().enumerate() {
                let Some((resolved, steps, step_limit)) = a else { continue };
                out.push(RolloutRecord {
                    task_id: format!("task-{task}"),
                    attempt_index: k as u32 + 1,
                    resolved,
                    trajectory: Trajectory { steps, terminal_resolved: resolved },
                    scaffold: format!("scaffold-{scaffold}"),
                    sampling: SamplingConfig { step_limit, ..Default::default() },
                });
            }
        }
        out
    })
}

struct Brute {
    kept: BTreeSet<String>,
    exported: usize,
    forbidden: usize,
    over_limit: usize,
    masked: usize,
}

fn brute_force(rollouts: &[RolloutRecord], config: &CurationConfig) -> Brute {
    let mut kept = BTreeSet::new();
    let tasks: BTreeSet<&str> = rollouts.iter().map(|r| r.task_id.as_str()).collect();
    let scaffolds: BTreeSet<&str> = rollouts.iter().map(|r| r.scaffold.as_str()).collect();
    for t in &tasks {
        for s in &scaffolds {
            let group: Vec<_> = rollouts.iter().filter(|r| r.task_id == *t && r.scaffold == *s).collect();
            let passes = group.iter().filter(|r| r.resolved).count() as u32;
            if group.len() as u32 == config.attempts_per_task && config.keep_pass_counts.contains(&passes) {
                kept.insert(t.to_string());
            }
        }
    }
    let mut b = Brute { kept, exported: 0, forbidden: 0, over_limit: 0, masked: 0 };
    for r in rollouts.iter().filter(|r| r.resolved && b.kept.contains(&r.task_id)) {
        if r.trajectory.steps.len() > r.sampling.step_limit as usize {
            b.over_limit += 1;
        } else if r.trajectory.steps.iter().any(|s| s.action.contains("git pull")) {
            b.forbidden += 1;
        } else {
            b.exported += 1;
            b.masked += r
                .trajectory
                .steps
                .iter()
                .filter(|s| s.mask || DEFAULT_ERROR_MARKERS.iter().any(|m| s.observation.contains(m)))
                .count();
        }
    }
    b
}

fn curation_equivalence() -> Outcome {
    let config = CurationConfig::default();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("train.jsonl");
    let mut runner = TestRunner::deterministic();
    let strategy = rollout_set();
    let (mut kept_total, mut exported_total) = (0, 0);
    for n in 0..1000 {
        let rollouts = strategy.new_tree(&mut runner).map_err(|e| e.to_string())?.current();
        let want = brute_force(&rollouts, &config);
        let counts = aggregate_pass_counts(&rollouts, &config).map_err(|e| format!("set {n}: {e}"))?;
        let kept = select_instances(&counts, &config);
        ensure!(kept == want.kept, "set {n}: kept {kept:?}, enumeration {:?}", want.kept);
        let exec = if n % 2 == 0 { Exec::Sequential } else { Exec::Parallel };
        let report = export_training_set(&rollouts, &kept, &config, &out, exec).map_err(|e| format!("set {n}: {e}"))?;
        let lines = std::fs::read_to_string(&out).map_err(|e| e.to_string())?.lines().count();
        ensure!(
            (report.trajectories_out, lines, report.rejected_forbidden, report.rejected_over_step_limit, report.masked_steps)
                == (want.exported, want.exported, want.forbidden, want.over_limit, want.masked),
            "set {n}: report {report:?} differs from enumeration (exported {}, forbidden {}, over limit {}, masked {})",
            want.exported,
            want.forbidden,
            want.over_limit,
            want.masked
        );
        kept_total += kept.len();
        exported_total += report.trajectories_out;
    }

    let pulls = ["git pull", "git pull origin main", "cd repo && git pull --rebase", "git pull; pytest", "echo x | git pull -q"];
    let mut rejected = 0;
    for (i, cmd) in pulls.iter().enumerate() {
        for at in 0..4 {
            let mut steps: Vec<Step> =
                (0..4).map(|k| Step { action: format!("ls {k}"), observation: "ok".into(), mask: false }).collect();
            steps[at].action = cmd.to_string();
            let t = Trajectory { steps, terminal_resolved: i % 2 == 0 };
            ensure!(sanitize_trajectory(&t, &config).is_none(), "kept a trajectory running {cmd:?}");
            rejected += 1;
        }
    }
    let mut seeded = 0;
    for marker in DEFAULT_ERROR_MARKERS {
        let steps = vec![
            Step { action: "ls".into(), observation: "README.md".into(), mask: false },
            Step { action: "bad".into(), observation: format!("before\n{marker}\nafter"), mask: false },
            Step { action: "pytest".into(), observation: "1 passed".into(), mask: false },
        ];
        let t = sanitize_trajectory(&Trajectory { steps, terminal_resolved: true }, &config)
            .ok_or_else(|| format!("rejected a trajectory with {marker:?}"))?;
        let masks: Vec<bool> = t.steps.iter().map(|s| s.mask).collect();
        ensure!(masks == [false, true, false], "{marker:?}: masks {masks:?}");
        seeded += 1;
    }
    Ok(format!(
        "1000 sets match enumeration ({kept_total} kept, {exported_total} exported); {rejected}/{rejected} git pull rejected, {seeded}/{seeded} error steps masked"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("filter fidelity", filter_fidelity),
        ("patch partition", patch_partition),
        ("script contract", script_contract),
        ("marker parsing", marker_parsing),
        ("dual-condition oracle", dual_condition),
        ("cache contract", cache_contract),
        ("end-to-end scripted model", end_to_end),
        ("legitimacy gate", legitimacy_gate),
        ("queue chaos", queue_chaos),
        ("curation equivalence", curation_equivalence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name} ({detail})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({why})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
