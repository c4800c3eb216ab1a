use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use forge_core::curation::{export_training_set, CurationConfig, RolloutRecord, SamplingConfig, Step, Trajectory};
use forge_core::fixtures::{generated_diff, marker_logs, pr_corpus};
use forge_core::harness::parse_exit_marker;
use forge_core::ingest::{filter_candidates_with, FilterStage, RawPullRequest, DEFAULT_MIN_STARS};
use forge_core::par::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn corpus(n: usize) -> Vec<RawPullRequest> {
    let base = pr_corpus();
    (0..n)
        .map(|i| {
            let mut r = base[i % base.len()].clone();
            r.pr_number = i as u64 + 1;
            if i % 3 == 0 {
                r.patch = generated_diff(i).0;
            }
            r
        })
        .collect()
}

fn rollouts(tasks: usize) -> Vec<RolloutRecord> {
    let mut out = Vec::new();
    for t in 0..tasks {
        for a in 1..=4u32 {
            let steps = (0..40)
                .map(|k| Step {
                    action: format!("cat src/mod_{k}.py"),
                    observation: if k % 9 == 0 { "Command timed out".into() } else { "x = 1\n".repeat(20) },
                    mask: false,
                })
                .collect();
            out.push(RolloutRecord {
                task_id: format!("task-{t}"),
                attempt_index: a,
                resolved: (t + a as usize).is_multiple_of(3),
                trajectory: Trajectory { steps, terminal_resolved: true },
                scaffold: "default".into(),
                sampling: SamplingConfig::default(),
            });
        }
    }
    out
}

fn filtering(c: &mut Criterion) {
    let records = corpus(2000);
    let mut g = c.benchmark_group("filter_candidates");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| filter_candidates_with(&records, DEFAULT_MIN_STARS, &FilterStage::ORDER, exec))
        });
    }
    g.finish();
}

fn curation(c: &mut Criterion) {
    let rollouts = rollouts(500);
    let config = CurationConfig::default();
    let kept: BTreeSet<String> = rollouts.iter().map(|r| r.task_id.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train.jsonl");
    let mut g = c.benchmark_group("export_training_set");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| export_training_set(&rollouts, &kept, &config, &out, exec).unwrap())
        });
    }
    g.finish();
}

fn markers(c: &mut Criterion) {
    let noise = "PASSED tests/test_ops.py::test_add\n".repeat(400);
    let logs: Vec<String> = marker_logs().iter().cycle().take(2000).map(|l| format!("{noise}{l}")).collect();
    let mut g = c.benchmark_group("parse_exit_marker");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| exec.map(&logs, |l| parse_exit_marker(l))));
    }
    g.finish();
}

criterion_group!(benches, filtering, curation, markers);
criterion_main!(benches);
