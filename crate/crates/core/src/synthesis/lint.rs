//! Static checks for generated Dockerfiles and evaluation scripts.
//!
//! Both linters are textual: they recognise the fixed strings the pipeline
//! depends on rather than parsing Docker or bash fully. Each rule runs on
//! its own and the result is sorted, so rule order never matters.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::shell::{simple_commands, split_commands, words};
use super::{BaseImageCatalog, BASE_IMAGE_OVERRIDE_MARKER};

pub const TEST_PATCH_PLACEHOLDER: &str = "[CONTENT OF TEST PATCH]";
pub const HEREDOC_DELIMITER: &str = "EOF_114329324912";
pub const START_MARKER: &str = ">>>>> Start Test Output";
pub const END_MARKER: &str = ">>>>> End Test Output";
pub const EXIT_MARKER_PREFIX: &str = "OPENSWE_EXIT_CODE=";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DockerfileViolation {
    BaseImage { found: String },
    MissingCopyRepo,
    MissingWorkdir,
    TestInvocation { line: usize, command: String },
    Entrypoint { line: usize },
    SecondCondaEnv { line: usize },
}

impl fmt::Display for DockerfileViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BaseImage { found } => write!(
                f,
                "first FROM must be openswe-python-<version> (2.7 or 3.5-3.14), found {found:?}; add `{BASE_IMAGE_OVERRIDE_MARKER}` only if another base is unavoidable"
            ),
            Self::MissingCopyRepo => write!(f, "missing `COPY repo /testbed`"),
            Self::MissingWorkdir => write!(f, "missing `WORKDIR /testbed/`"),
            Self::TestInvocation { line, command } => {
                write!(f, "line {line}: tests must not run during the build ({command})")
            }
            Self::Entrypoint { line } => write!(f, "line {line}: ENTRYPOINT is not allowed"),
            Self::SecondCondaEnv { line } => write!(
                f,
                "line {line}: do not create another conda env; change the base image version instead"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScriptViolation {
    PlaceholderCount { found: usize },
    PlaceholderOutsideHeredoc,
    MissingStartMarker,
    MissingEndMarker,
    MarkersOutOfOrder,
    MissingRcCapture,
    MissingExitEcho,
    Errexit { line: usize },
}

impl fmt::Display for ScriptViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PlaceholderCount { found } => write!(
                f,
                "the placeholder {TEST_PATCH_PLACEHOLDER} must appear exactly once (found {found})"
            ),
            Self::PlaceholderOutsideHeredoc => write!(
                f,
                "the placeholder must sit inside a heredoc delimited by {HEREDOC_DELIMITER}"
            ),
            Self::MissingStartMarker => write!(f, "missing `echo \"{START_MARKER}\"` before the tests"),
            Self::MissingEndMarker => write!(f, "missing `echo \"{END_MARKER}\"` after the tests"),
            Self::MarkersOutOfOrder => write!(f, "the start marker must come before the end marker"),
            Self::MissingRcCapture => {
                write!(f, "`rc=$?` must be on the line right after the test command")
            }
            Self::MissingExitEcho => write!(f, "missing `echo \"{EXIT_MARKER_PREFIX}$rc\"`"),
            Self::Errexit { line } => write!(f, "line {line}: `set -e` (errexit) is not allowed"),
        }
    }
}

/// One instruction with continuation lines joined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    /// 1-based line of the keyword.
    pub line: usize,
    pub keyword: String,
    pub args: String,
}

/// Logical Dockerfile instructions; comments and blank lines are dropped.
pub fn instructions(text: &str) -> Vec<Instruction> {
    let mut out: Vec<Instruction> = Vec::new();
    let mut pending: Option<Instruction> = None;
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.starts_with('#') || (trimmed.is_empty() && pending.is_none()) {
            continue;
        }
        let (body, continues) = match trimmed.strip_suffix('\\') {
            Some(b) => (b, true),
            None => (trimmed, false),
        };
        match pending.as_mut() {
            Some(p) => {
                p.args.push(' ');
                p.args.push_str(body);
            }
            None => {
                let (kw, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
                pending = Some(Instruction {
                    line: idx + 1,
                    keyword: kw.to_ascii_uppercase(),
                    args: rest.trim().to_string(),
                });
            }
        }
        if !continues {
            out.extend(pending.take());
        }
    }
    out.extend(pending);
    out
}

fn non_flag_args(args: &str) -> Vec<String> {
    words(args).into_iter().filter(|w| !w.starts_with("--")).collect()
}

/// Command text of a RUN instruction, expanding the JSON exec form.
fn run_command(args: &str) -> String {
    let t = args.trim();
    if t.starts_with('[') {
        if let Ok(parts) = serde_json::from_str::<Vec<String>>(t) {
            return parts
                .iter()
                .map(|p| if p.contains(' ') { format!("'{p}'") } else { p.clone() })
                .collect::<Vec<_>>()
                .join(" ");
        }
    }
    t.to_string()
}

fn is_test_command(w: &[String]) -> bool {
    let first = w[0].rsplit('/').next().unwrap_or(&w[0]);
    let arg = |i: usize| w.get(i).map(String::as_str);
    match first {
        "pytest" | "py.test" | "unittest" => true,
        p if p.starts_with("python") && arg(1) == Some("-m") => {
            matches!(arg(2), Some("pytest") | Some("unittest"))
        }
        "npm" | "yarn" | "pnpm" => arg(1) == Some("test") || (arg(1) == Some("run") && arg(2) == Some("test")),
        "mvn" | "mvnw" | "./mvnw" => w[1..].iter().any(|x| x == "test"),
        _ => false,
    }
}

fn is_conda_create(w: &[String]) -> bool {
    let first = w[0].rsplit('/').next().unwrap_or(&w[0]);
    if !matches!(first, "conda" | "mamba" | "micromamba") {
        return false;
    }
    let rest: Vec<&str> = w[1..].iter().map(String::as_str).filter(|x| !x.starts_with('-')).collect();
    matches!(rest.as_slice(), ["create", ..] | ["env", "create", ..])
}

fn base_image_ok(image: &str, catalog: &BaseImageCatalog) -> bool {
    let last = image.rsplit('/').next().unwrap_or(image);
    let name = last.split([':', '@']).next().unwrap_or(last);
    catalog.versions().any(|v| name == BaseImageCatalog::tag_for(v))
}

pub fn lint_dockerfile(text: &str) -> Vec<DockerfileViolation> {
    lint_dockerfile_with(text, &BaseImageCatalog::standard())
}

pub fn lint_dockerfile_with(text: &str, catalog: &BaseImageCatalog) -> Vec<DockerfileViolation> {
    let ins = instructions(text);
    let mut v = Vec::new();

    let override_marker = text.lines().any(|l| l.trim() == BASE_IMAGE_OVERRIDE_MARKER);
    let first_from = ins
        .iter()
        .find(|i| i.keyword == "FROM")
        .and_then(|i| non_flag_args(&i.args).into_iter().next())
        .unwrap_or_default();
    if !override_marker && !base_image_ok(&first_from, catalog) {
        v.push(DockerfileViolation::BaseImage { found: first_from });
    }

    let has = |kw: &str, ok: &dyn Fn(&[String]) -> bool| {
        ins.iter().any(|i| i.keyword == kw && ok(&non_flag_args(&i.args)))
    };
    if !has("COPY", &|a| a.len() == 2 && a[0] == "repo" && matches!(a[1].as_str(), "/testbed" | "/testbed/")) {
        v.push(DockerfileViolation::MissingCopyRepo);
    }
    if !has("WORKDIR", &|a| a.len() == 1 && matches!(a[0].as_str(), "/testbed" | "/testbed/")) {
        v.push(DockerfileViolation::MissingWorkdir);
    }

    for i in &ins {
        match i.keyword.as_str() {
            "ENTRYPOINT" => v.push(DockerfileViolation::Entrypoint { line: i.line }),
            "RUN" => {
                let cmds = simple_commands(&run_command(&i.args));
                if let Some(c) = cmds.iter().find(|c| is_test_command(c)) {
                    v.push(DockerfileViolation::TestInvocation {
                        line: i.line,
                        command: c.join(" "),
                    });
                }
                if cmds.iter().any(|c| is_conda_create(c)) {
                    v.push(DockerfileViolation::SecondCondaEnv { line: i.line });
                }
            }
            _ => {}
        }
    }
    v.sort();
    v
}

/// The first three instructions, the cache-stable base of every draft.
pub fn stable_prefix(text: &str) -> Vec<String> {
    instructions(text)
        .into_iter()
        .take(3)
        .map(|i| format!("{} {}", i.keyword, i.args))
        .collect()
}

fn heredoc_opener() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"<<(-?)\s*['"]?([A-Za-z_][A-Za-z0-9_]*)['"]?"#).expect("static regex"))
}

/// A heredoc in a script: opener line, body lines and closing line,
/// all 0-based line indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heredoc {
    pub opener: usize,
    pub delimiter: String,
    /// Index of the closing delimiter line, `None` if never closed.
    pub close: Option<usize>,
}

impl Heredoc {
    pub fn contains(&self, line: usize) -> bool {
        line > self.opener && self.close.is_none_or(|c| line <= c)
    }
}

pub fn heredocs(lines: &[&str]) -> Vec<Heredoc> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let code = line.trim_start();
        if code.starts_with('#') {
            i += 1;
            continue;
        }
        if let Some(c) = heredoc_opener().captures(line) {
            let strip_tabs = &c[1] == "-";
            let delimiter = c[2].to_string();
            let close = (i + 1..lines.len()).find(|&j| {
                let l = if strip_tabs { lines[j].trim_start_matches('\t') } else { lines[j] };
                l.trim_end() == delimiter
            });
            out.push(Heredoc { opener: i, delimiter, close });
            i = close.map(|c| c + 1).unwrap_or(lines.len());
        } else {
            i += 1;
        }
    }
    out
}

/// Script lines that are code: outside heredoc bodies and not comments.
fn code_lines<'a>(lines: &[&'a str], docs: &[Heredoc]) -> Vec<(usize, &'a str)> {
    lines
        .iter()
        .enumerate()
        .filter(|(i, _)| !docs.iter().any(|d| d.contains(*i)))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| (i, *l))
        .collect()
}

fn rc_capture() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*rc=\$\?\s*;?\s*(#.*)?$").expect("static regex"))
}

fn exit_echo() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\s*(echo|printf)\b.*OPENSWE_EXIT_CODE=\$(\{rc\}|rc\b)"#).expect("static regex")
    })
}

fn hardcoded_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"OPENSWE_EXIT_CODE=\d").expect("static regex"))
}

fn enables_errexit(code: &str) -> bool {
    split_commands(code).iter().any(|cmd| {
        let w = words(cmd);
        if w.first().map(String::as_str) != Some("set") {
            return false;
        }
        w.iter().enumerate().skip(1).any(|(i, x)| {
            (x.starts_with('-') && !x.starts_with("--") && x.len() > 1 && x[1..].contains('e') && !x.starts_with("-o"))
                || (x == "-o" && w.get(i + 1).map(String::as_str) == Some("errexit"))
        })
    })
}

pub fn lint_eval_script(text: &str) -> Vec<ScriptViolation> {
    let lines: Vec<&str> = text.lines().collect();
    let docs = heredocs(&lines);
    let code = code_lines(&lines, &docs);
    let mut v = Vec::new();

    let placeholders = text.matches(TEST_PATCH_PLACEHOLDER).count();
    if placeholders != 1 {
        v.push(ScriptViolation::PlaceholderCount { found: placeholders });
    } else {
        let at = lines
            .iter()
            .position(|l| l.contains(TEST_PATCH_PLACEHOLDER))
            .expect("counted once");
        let inside = docs
            .iter()
            .any(|d| d.delimiter == HEREDOC_DELIMITER && d.close.is_some() && d.contains(at) && Some(at) != d.close);
        if !inside {
            v.push(ScriptViolation::PlaceholderOutsideHeredoc);
        }
    }

    let start = code.iter().find(|(_, l)| l.contains(START_MARKER)).map(|(i, _)| *i);
    let ends: Vec<usize> = code.iter().filter(|(_, l)| l.contains(END_MARKER)).map(|(i, _)| *i).collect();
    match (start, ends.is_empty()) {
        (None, _) => v.push(ScriptViolation::MissingStartMarker),
        (Some(_), true) => {}
        (Some(s), false) => {
            if !ends.iter().any(|&e| e > s) {
                v.push(ScriptViolation::MarkersOutOfOrder);
            }
        }
    }
    if ends.is_empty() {
        v.push(ScriptViolation::MissingEndMarker);
    }

    let is_marker_line = |l: &str| l.contains(START_MARKER) || l.contains(END_MARKER);
    let rc_ok = code.iter().enumerate().any(|(k, (_, l))| {
        rc_capture().is_match(l)
            && k > 0
            && {
                let prev = code[k - 1].1;
                !is_marker_line(prev) && !rc_capture().is_match(prev)
            }
    });
    if !rc_ok {
        v.push(ScriptViolation::MissingRcCapture);
    }

    if !code.iter().any(|(_, l)| exit_echo().is_match(l)) {
        v.push(ScriptViolation::MissingExitEcho);
    }

    if let Some(first) = lines.first() {
        if first.starts_with("#!") && words(first).iter().skip(1).any(|w| w.starts_with('-') && w.contains('e')) {
            v.push(ScriptViolation::Errexit { line: 1 });
        }
    }
    for (i, l) in &code {
        if enables_errexit(l) {
            v.push(ScriptViolation::Errexit { line: i + 1 });
        }
    }
    v.sort();
    v
}

/// 1-based lines that print a literal exit marker instead of `$rc`.
pub fn find_hardcoded_markers(script: &str) -> Vec<usize> {
    let lines: Vec<&str> = script.lines().collect();
    let docs = heredocs(&lines);
    code_lines(&lines, &docs)
        .into_iter()
        .filter(|(_, l)| hardcoded_marker().is_match(l))
        .map(|(i, _)| i + 1)
        .collect()
}

/// Text between the opener and closing line of the first heredoc using
/// `delimiter`.
pub fn heredoc_body(script: &str, delimiter: &str) -> Option<String> {
    let lines: Vec<&str> = script.split_inclusive('\n').collect();
    let plain: Vec<&str> = lines.iter().map(|l| l.trim_end_matches(['\n', '\r'])).collect();
    let doc = heredocs(&plain).into_iter().find(|d| d.delimiter == delimiter)?;
    let close = doc.close?;
    Some(lines[doc.opener + 1..close].concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMPLIANT: &str = "FROM openswe-python-3.12\nCOPY repo /testbed\nWORKDIR /testbed/\n\
        ENV DEBIAN_FRONTEND=noninteractive\nRUN apt install -qq -y g++\n\
        RUN bash -lc 'pip install -r requirements.txt'\nRUN bash -lc 'pip install -e .'\n\
        RUN bash -lc 'pip install pytest \"poetry>=1,<2\"'\n";

    #[test]
    fn compliant_dockerfile_passes() {
        assert_eq!(lint_dockerfile(COMPLIANT), []);
    }

    #[test]
    fn entrypoint_and_base_image() {
        let v = lint_dockerfile(&format!("{COMPLIANT}ENTRYPOINT [\"x\"]\n"));
        assert_eq!(v, [DockerfileViolation::Entrypoint { line: 9 }]);
        let v = lint_dockerfile(&COMPLIANT.replace("openswe-python-3.12", "ubuntu:24.04"));
        assert_eq!(v, [DockerfileViolation::BaseImage { found: "ubuntu:24.04".into() }]);
        let overridden = format!(
            "{BASE_IMAGE_OVERRIDE_MARKER}\n{}",
            COMPLIANT.replace("openswe-python-3.12", "ubuntu:24.04")
        );
        assert_eq!(lint_dockerfile(&overridden), []);
        let v = lint_dockerfile(&COMPLIANT.replace("3.12", "3.4"));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn test_runs_and_conda_envs() {
        let v = lint_dockerfile(&format!("{COMPLIANT}RUN pip install -e . && \\\n    pytest tests/\n"));
        assert_eq!(
            v,
            [DockerfileViolation::TestInvocation { line: 9, command: "pytest tests/".into() }]
        );
        for cmd in ["RUN npm test", "RUN mvn -q test", "RUN python3 -m unittest discover", "RUN [\"pytest\", \"-x\"]"] {
            assert_eq!(lint_dockerfile(&format!("{COMPLIANT}{cmd}\n")).len(), 1, "{cmd}");
        }
        let v = lint_dockerfile(&format!("{COMPLIANT}RUN conda create -n py38 python=3.8 -y\n"));
        assert_eq!(v, [DockerfileViolation::SecondCondaEnv { line: 9 }]);
    }

    #[test]
    fn structure_rules() {
        let v = lint_dockerfile("FROM openswe-python-3.9\nRUN echo hi\n");
        assert_eq!(v, [DockerfileViolation::MissingCopyRepo, DockerfileViolation::MissingWorkdir]);
        assert_eq!(lint_dockerfile("FROM openswe-python-3.9\nCOPY repo /testbed/\nWORKDIR /testbed\n"), []);
        assert_eq!(
            stable_prefix(COMPLIANT),
            ["FROM openswe-python-3.12", "COPY repo /testbed", "WORKDIR /testbed/"]
        );
    }

    const SCRIPT: &str = "#!/bin/bash\n. /opt/conda/etc/profile.d/conda.sh\nconda activate testbed\ncd /testbed\n\
        git apply -v --allow-empty - <<'EOF_114329324912'\n[CONTENT OF TEST PATCH]\nEOF_114329324912\n\
        echo \">>>>> Start Test Output\"\npytest -rA tests/test_a.py\nrc=$? # save\n\
        echo \">>>>> End Test Output\"\necho \"OPENSWE_EXIT_CODE=$rc\"\n";

    #[test]
    fn script_contract() {
        assert_eq!(lint_eval_script(SCRIPT), []);
        assert_eq!(
            lint_eval_script(&SCRIPT.replace("rc=$? # save\n", "")),
            [ScriptViolation::MissingRcCapture]
        );
        let twice = SCRIPT.replace("[CONTENT OF TEST PATCH]\n", "[CONTENT OF TEST PATCH]\n[CONTENT OF TEST PATCH]\n");
        assert_eq!(lint_eval_script(&twice), [ScriptViolation::PlaceholderCount { found: 2 }]);
        assert_eq!(
            lint_eval_script(&SCRIPT.replace("cd /testbed\n", "cd /testbed\nset -euo pipefail\n")),
            [ScriptViolation::Errexit { line: 5 }]
        );
        assert_eq!(lint_eval_script(&SCRIPT.replace("cd /testbed\n", "set -x\ncd /testbed\n")), []);
    }

    #[test]
    fn hardcoded_marker_detection() {
        assert!(find_hardcoded_markers(SCRIPT).is_empty());
        let cheat = SCRIPT.replace("echo \"OPENSWE_EXIT_CODE=$rc\"", "echo \"OPENSWE_EXIT_CODE=0\"");
        assert_eq!(find_hardcoded_markers(&cheat), [12]);
        let commented = format!("{SCRIPT}# echo OPENSWE_EXIT_CODE=0\n");
        assert!(find_hardcoded_markers(&commented).is_empty());
    }

    #[test]
    fn heredoc_body_extraction() {
        let s = "cat <<'X'\nline1\nline2\nX\necho done\n";
        assert_eq!(heredoc_body(s, "X").unwrap(), "line1\nline2\n");
        assert_eq!(heredoc_body("cat <<X\nX\n", "X").unwrap(), "");
        assert_eq!(heredoc_body("cat <<X\nunterminated\n", "X"), None);
    }
}
