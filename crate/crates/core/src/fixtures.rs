//! A tiny Python project with a seeded bug, used by tests and demos.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::ingest::TaskCandidate;

pub const DOCKERFILE: &str = "FROM openswe-python-3.11\nCOPY repo /testbed\nWORKDIR /testbed/\n\
ENV PYTHONDONTWRITEBYTECODE=1\nRUN bash -lc 'python --version'\n";

pub const EVAL_SCRIPT: &str = r#"#!/bin/bash
. /opt/conda/etc/profile.d/conda.sh
conda activate testbed
cd /testbed

git apply -v --allow-empty - <<'EOF_114329324912'
[CONTENT OF TEST PATCH]
EOF_114329324912

echo ">>>>> Start Test Output"
python -m pytest --no-header -rA --tb=no -p no:cacheprovider tests/test_ops.py
rc=$?
echo ">>>>> End Test Output"
echo "OPENSWE_EXIT_CODE=$rc"
"#;

const OPS: &str = "def add(a, b):\n    return a - b\n\n\ndef sub(a, b):\n    return a - b\n";
const TESTS: &str = "from calc.ops import sub\n\n\ndef test_sub():\n    assert sub(5, 3) == 2\n";
const TESTS_NEW: &str = "from calc.ops import add, sub\n\n\ndef test_sub():\n    assert sub(5, 3) == 2\n\n\ndef test_add():\n    assert add(2, 3) == 5\n";
const OPS_FIXED: &str = "def add(a, b):\n    return a + b\n\n\ndef sub(a, b):\n    return a - b\n";
const OPS_WRONG: &str = "def add(a, b):\n    return a * b\n\n\ndef sub(a, b):\n    return a - b\n";

#[derive(Debug, Clone)]
pub struct SeededTask {
    /// Directory to use as a `RepoSource::LocalDir`.
    pub upstream_root: PathBuf,
    pub repo_dir: PathBuf,
    pub candidate: TaskCandidate,
    /// A fix that does not make the new test pass.
    pub wrong_fix: String,
    /// A test patch whose tests already pass without the fix.
    pub passing_test_patch: String,
}

fn git(dir: &Path, args: &[&str]) -> io::Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "user.name=fixture", "-c", "user.email=fixture@example.com"])
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .output()?;
    if !out.status.success() {
        return Err(io::Error::other(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn diff_with(dir: &Path, file: &str, content: &str) -> io::Result<String> {
    fs::write(dir.join(file), content)?;
    let d = git(dir, &["diff"])?;
    git(dir, &["checkout", "--", "."])?;
    Ok(d)
}

/// Creates `<root>/octo__calc` as a git repository and the matching task.
pub fn seeded_task(root: &Path) -> io::Result<SeededTask> {
    let repo = root.join("octo__calc");
    fs::create_dir_all(repo.join("calc"))?;
    fs::create_dir_all(repo.join("tests"))?;
    fs::write(repo.join("calc/__init__.py"), "")?;
    fs::write(repo.join("calc/ops.py"), OPS)?;
    fs::write(repo.join("tests/test_ops.py"), TESTS)?;
    fs::write(repo.join("README.md"), "# calc\n\nRun the tests with `python -m pytest`.\n")?;
    fs::write(repo.join("requirements.txt"), "pytest\n")?;
    git(&repo, &["init", "--quiet", "-b", "main"])?;
    git(&repo, &["add", "-A"])?;
    git(&repo, &["commit", "--quiet", "-m", "initial"])?;
    let base_commit = git(&repo, &["rev-parse", "HEAD"])?.trim().to_string();

    let test_patch = diff_with(&repo, "tests/test_ops.py", TESTS_NEW)?;
    let fix_patch = diff_with(&repo, "calc/ops.py", OPS_FIXED)?;
    let wrong_fix = diff_with(&repo, "calc/ops.py", OPS_WRONG)?;
    let passing_test_patch = diff_with(
        &repo,
        "tests/test_ops.py",
        &format!("{TESTS}\n\ndef test_sub_zero():\n    assert sub(1, 1) == 0\n"),
    )?;

    Ok(SeededTask {
        upstream_root: root.to_path_buf(),
        repo_dir: repo,
        candidate: TaskCandidate {
            repo_id: "octo/calc".into(),
            pr_number: 42,
            base_commit,
            issue_text: "add() subtracts instead of adding".into(),
            fix_patch,
            test_patch,
        },
        wrong_fix,
        passing_test_patch,
    })
}

/// An evaluation script that points pytest at a file that does not exist.
pub fn broken_eval_script() -> String {
    EVAL_SCRIPT.replace("tests/test_ops.py", "tests/test_missing.py")
}

/// A script that passes the contract lint yet decides the marker itself.
pub fn cheating_eval_script() -> String {
    format!(
        "{EVAL_SCRIPT}if git -C /testbed diff --quiet -- calc; then echo \"OPENSWE_EXIT_CODE=1\"; else echo \"OPENSWE_EXIT_CODE=0\"; fi\n"
    )
}

pub fn explore_finish_reply() -> String {
    let report = serde_json::json!({
        "dependency_pins": ["pytest"],
        "language_version": "3.11",
        "setup_commands": [],
        "test_commands": ["python -m pytest tests/test_ops.py"],
        "env_framework_notes": "pytest project, no build step",
    });
    format!(
        "Enough context.\n```tool_call\n{}\n```\n",
        serde_json::json!({"name": "finish", "arguments": report})
    )
}

pub fn dockerfile_reply(text: &str) -> String {
    format!("<dockerfile>\n{text}</dockerfile>\n")
}

pub fn script_reply(text: &str) -> String {
    format!("<script>\n{text}</script>\n")
}

pub fn analysis_reply(is_finish: bool, dockerfile: &str, script: &str, retrieval: &str) -> String {
    let d = serde_json::json!({
        "is_finish": is_finish,
        "guidance_for_write_dockerfile_agent": dockerfile,
        "guidance_for_write_eval_script_agent": script,
        "guidance_for_context_retrieval_agent": retrieval,
    });
    format!("```json\n{d:#}\n```\n")
}

/// Replies that solve the seeded task in one iteration.
pub fn happy_transcript() -> crate::modelio::Transcript {
    use crate::modelio::TemplateId::*;
    let mut t = crate::modelio::Transcript::default();
    t.push(Exploration, explore_finish_reply())
        .push(DockerfileInit, dockerfile_reply(DOCKERFILE))
        .push(EvalscriptInit, script_reply(EVAL_SCRIPT))
        .push(Analysis, analysis_reply(true, "", "", ""));
    t
}

/// Replies where the first script is wrong and the analysis asks for a
/// script fix, so only the script changes between iterations.
pub fn script_fix_transcript() -> crate::modelio::Transcript {
    use crate::modelio::TemplateId::*;
    let mut t = crate::modelio::Transcript::default();
    t.push(Exploration, explore_finish_reply())
        .push(DockerfileInit, dockerfile_reply(DOCKERFILE))
        .push(EvalscriptInit, script_reply(&broken_eval_script()))
        .push(
            Analysis,
            analysis_reply(false, "", "pytest reports that tests/test_missing.py does not exist; run tests/test_ops.py", ""),
        )
        .push(EvalscriptInit, script_reply(EVAL_SCRIPT))
        .push(Analysis, analysis_reply(true, "", "", ""));
    t
}

fn file_section(path: &str, kind: usize, n: usize) -> String {
    let hunk = format!("@@ -1,2 +1,3 @@\n context {n}\n-old {n}\n+new {n}\n+more {n}\n");
    match kind % 5 {
        0 => format!("diff --git a/{path} b/{path}\nindex 1111111..2222222 100644\n--- a/{path}\n+++ b/{path}\n{hunk}"),
        1 => format!(
            "diff --git a/{path} b/{path}\nnew file mode 100644\nindex 0000000..3333333\n--- /dev/null\n+++ b/{path}\n@@ -0,0 +1,2 @@\n+line {n}\n+end\n"
        ),
        2 => format!(
            "diff --git a/{path} b/{path}\ndeleted file mode 100644\nindex 4444444..0000000\n--- a/{path}\n+++ /dev/null\n@@ -1 +0,0 @@\n-gone {n}\n"
        ),
        3 => format!("--- a/{path}\t2024-01-01 00:00:00\n+++ b/{path}\t2024-01-02 00:00:00\n{hunk}"),
        _ => format!(
            "diff --git a/{path} b/{path}\nindex 5555555..6666666 100644\n--- a/{path}\n+++ b/{path}\n@@ -1 +1 @@\n-a {n}\n\\ No newline at end of file\n+b {n}\n\\ No newline at end of file\n"
        ),
    }
}

const DIFF_DIRS: [&str; 10] =
    ["src", "tests", "pkg/Spec", "lib/e2e_helpers", "docs", "app/core", "TestData", "contest", "api/v2", "respect"];
const DIFF_NAMES: [&str; 7] = ["main.py", "test_api.py", "util_spec.rb", "conftest.py", "models.py", "E2E.md", "io.c"];

/// Deterministic multi-file diff number `i`, with the paths it touches.
pub fn generated_diff(i: usize) -> (String, Vec<String>) {
    let files = i % 6 + 1;
    let mut text = String::new();
    let mut paths = Vec::new();
    for f in 0..files {
        let k = i * 7 + f * 3;
        let path = format!("{}/{}", DIFF_DIRS[k % DIFF_DIRS.len()], DIFF_NAMES[(k / 3 + f) % DIFF_NAMES.len()]);
        let section = file_section(&path, i + f, k);
        text.push_str(&section);
        paths.push(path);
    }
    (text, paths)
}

fn pr(number: u64, stars: u64, language: &str, issues: &[&str], patch: &str) -> crate::ingest::RawPullRequest {
    crate::ingest::RawPullRequest {
        repo_id: format!("corpus/repo{}", number % 3),
        pr_number: number,
        stars,
        primary_language: language.into(),
        issues: issues
            .iter()
            .enumerate()
            .map(|(k, body)| crate::ingest::LinkedIssue {
                issue_id: 100 + k as u64,
                title: format!("issue {k}"),
                body: body.to_string(),
            })
            .collect(),
        patch: patch.into(),
        base_commit: format!("{number:040x}"),
    }
}

/// Twenty pull requests covering every rejection stage, numbered 1..=20.
pub fn pr_corpus() -> Vec<crate::ingest::RawPullRequest> {
    let src = file_section("src/app.py", 0, 1);
    let tst = file_section("tests/test_app.py", 0, 2);
    let mixed = format!("{src}{tst}");
    let spec_and_src = format!("{}{}", file_section("spec/models_spec.py", 0, 3), file_section("lib/models.py", 0, 4));
    let e2e_only = format!("{}{}", file_section("e2e/flow.py", 0, 5), file_section("docs/spec.md", 0, 6));
    let del_src = file_section("src/old.py", 2, 7);
    let del_test = file_section("tests/test_old.py", 2, 8);
    let testing_md = format!("{}{}", file_section("TESTING.md", 0, 9), file_section("setup.py", 0, 10));
    let rename = "diff --git a/src/a.py b/src/b.py\nsimilarity index 100%\nrename from src/a.py\nrename to src/b.py\n";
    let bug = "add() is wrong";
    vec![
        pr(1, 5, "Python", &[bug], &mixed),
        pr(2, 4, "Python", &[bug], &mixed),
        pr(3, 0, "JavaScript", &[], &tst),
        pr(4, 50, "Jupyter Notebook", &[bug], &mixed),
        pr(5, 50, "python", &[bug], &mixed),
        pr(6, 50, "Python", &[], &mixed),
        pr(7, 50, "Python", &["  \n\t "], &mixed),
        pr(8, 50, "Python", &["", bug], &mixed),
        pr(9, 50, "Python", &[bug], &tst),
        pr(10, 50, "Python", &[bug], ""),
        pr(11, 50, "Python", &[bug], "this is not a diff\n"),
        pr(12, 1000, "Python", &[bug], &src),
        pr(13, 9, "Python", &[bug], &spec_and_src),
        pr(14, 9, "Python", &[bug], &e2e_only),
        pr(15, 9, "Python", &[bug], &del_src),
        pr(16, 9, "Python", &[bug], &del_test),
        pr(17, 5, "Python", &[bug], &testing_md),
        pr(18, 4, "Python", &[bug], &tst),
        pr(19, 80, "Go", &[""], &mixed),
        pr(20, 6, "Python", &[bug], rename),
    ]
}

/// Crafted logs around the exit marker: absent, repeated, malformed,
/// embedded mid-token and surrounded by noise.
pub fn marker_logs() -> Vec<String> {
    let fragments = [
        "OPENSWE_EXIT_CODE=0",
        "OPENSWE_EXIT_CODE=1",
        "OPENSWE_EXIT_CODE=137",
        "XOPENSWE_EXIT_CODE=1",
        "OPENSWE_EXIT_CODE=1x",
        "OPENSWE_EXIT_CODE=",
        "OPENSWE_EXIT_CODE= 1",
        " OPENSWE_EXIT_CODE=2",
        "OPENSWE_EXIT_CODE=3   ",
        "openswe_exit_code=4",
        "echo OPENSWE_EXIT_CODE=5",
        "OPENSWE_EXIT_CODE=-1",
        "OPENSWE_EXIT_CODE=99999999999999999999999",
        "OPENSWE_EXIT_CODE=6\r",
        "",
    ];
    let noise = ["collected 3 items", ">>>>> Start Test Output", "FAILED tests/test_a.py::test_x", ">>>>> End Test Output"];
    let mut logs = Vec::new();
    for (i, a) in fragments.iter().enumerate() {
        logs.push(format!("{}\n{a}\n", noise[i % noise.len()]));
        for b in fragments.iter().skip(i + 1).step_by(3) {
            logs.push(format!("{a}\n{}\n{b}", noise[(i + 1) % noise.len()]));
        }
    }
    logs.push(String::new());
    logs.push("no marker at all\n".into());
    logs
}

/// Variants of [`EVAL_SCRIPT`] that each break one rule of the script
/// contract, with a label.
pub fn script_mutants() -> Vec<(&'static str, String)> {
    let s = EVAL_SCRIPT;
    vec![
        ("no start marker", s.replace("echo \">>>>> Start Test Output\"\n", "")),
        ("no end marker", s.replace("echo \">>>>> End Test Output\"\n", "")),
        (
            "markers swapped",
            s.replace(">>>>> Start Test Output", "@@START@@")
                .replace(">>>>> End Test Output", ">>>>> Start Test Output")
                .replace("@@START@@", ">>>>> End Test Output"),
        ),
        ("no rc capture", s.replace("rc=$?\n", "")),
        ("no exit echo", s.replace("echo \"OPENSWE_EXIT_CODE=$rc\"\n", "")),
        ("no placeholder", s.replace("[CONTENT OF TEST PATCH]\n", "")),
        ("two placeholders", s.replace("[CONTENT OF TEST PATCH]\n", "[CONTENT OF TEST PATCH]\n[CONTENT OF TEST PATCH]\n")),
        (
            "placeholder outside heredoc",
            s.replace("[CONTENT OF TEST PATCH]\n", "").replace("cd /testbed\n", "cd /testbed\n# [CONTENT OF TEST PATCH]\n"),
        ),
        ("set -e", s.replace("cd /testbed\n", "cd /testbed\nset -e\n")),
        ("set -euo pipefail", s.replace("cd /testbed\n", "cd /testbed\nset -euo pipefail\n")),
        ("errexit shebang", s.replace("#!/bin/bash\n", "#!/bin/bash -e\n")),
    ]
}
