//! Unified-diff sectioning and test/non-test routing.
//!
//! A patch is cut into per-file sections whose text slices tile the input
//! exactly, so routing sections into two buckets and merging them back in
//! original order reproduces the patch byte for byte.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

const GIT_HEADER: &str = "diff --git ";
const DEV_NULL: &str = "/dev/null";

/// Substrings that mark a path as test code.
pub const TEST_PATH_MARKERS: [&str; 3] = ["test", "spec", "e2e"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("malformed patch at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

impl PatchError {
    fn at(line: usize, reason: impl Into<String>) -> Self {
        PatchError::Malformed {
            line,
            reason: reason.into(),
        }
    }
}

/// One file's worth of a unified diff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePatch<'a> {
    /// Pre-image path, `None` for created files.
    pub old_path: Option<String>,
    /// Post-image path, `None` for deleted files.
    pub new_path: Option<String>,
    /// Exact slice of the input covering this file's header and hunks.
    pub text: &'a str,
}

impl FilePatch<'_> {
    /// The path used for routing: the new path, or the old one for deletions.
    pub fn route_path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or("")
    }

    pub fn is_test(&self) -> bool {
        is_test_path(self.route_path())
    }
}

/// Fix/test halves of a patch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchSplit {
    pub fix_patch: String,
    pub test_patch: String,
}

/// True when the path contains `test`, `spec` or `e2e`, ignoring case.
pub fn is_test_path(path: &str) -> bool {
    let lower = path.to_ascii_lowercase();
    TEST_PATH_MARKERS.iter().any(|m| lower.contains(m))
}

/// Routes each file section of `patch` to the test or fix half.
pub fn split_patch(patch: &str) -> Result<PatchSplit, PatchError> {
    let mut split = PatchSplit::default();
    for section in parse_patch(patch)? {
        if section.is_test() {
            split.test_patch.push_str(section.text);
        } else {
            split.fix_patch.push_str(section.text);
        }
    }
    Ok(split)
}

/// Paths touched by a patch, in file order.
pub fn touched_paths(patch: &str) -> Result<Vec<String>, PatchError> {
    Ok(parse_patch(patch)?
        .iter()
        .map(|s| s.route_path().to_string())
        .collect())
}

fn hunk_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@").expect("static regex")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    Header { saw_new: bool, plain: bool },
    Hunk { old_left: u64, new_left: u64 },
    AfterHunk,
}

struct Section {
    start: usize,
    old_path: Option<String>,
    new_path: Option<String>,
}

/// Splits `patch` into per-file sections.
///
/// Accepts git-style (`diff --git`) and plain (`---`/`+++`) unified diffs.
/// Hunk line counts are checked against the `@@` header. The empty string
/// is a valid patch with no sections.
pub fn parse_patch(patch: &str) -> Result<Vec<FilePatch<'_>>, PatchError> {
    let lines: Vec<(usize, &str)> = {
        let mut offset = 0;
        patch
            .split_inclusive('\n')
            .map(|l| {
                let start = offset;
                offset += l.len();
                (start, l)
            })
            .collect()
    };

    let mut sections: Vec<Section> = Vec::new();
    let mut state = State::Start;

    for (idx, &(offset, raw)) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\n').trim_end_matches('\r');
        let next_is_new_file = lines
            .get(idx + 1)
            .map(|(_, l)| l.starts_with("+++ "))
            .unwrap_or(false);

        if let State::Hunk { old_left, new_left } = state {
            let (o, n) = match line.as_bytes().first() {
                None | Some(b' ') => (1, 1),
                Some(b'-') => (1, 0),
                Some(b'+') => (0, 1),
                Some(b'\\') => (0, 0),
                _ => {
                    return Err(PatchError::at(
                        line_no,
                        format!("unexpected line inside hunk: {line:?}"),
                    ))
                }
            };
            if o > old_left || n > new_left {
                return Err(PatchError::at(line_no, "hunk longer than its header"));
            }
            let (old_left, new_left) = (old_left - o, new_left - n);
            state = if old_left == 0 && new_left == 0 {
                State::AfterHunk
            } else {
                State::Hunk { old_left, new_left }
            };
            continue;
        }

        if let Some(rest) = line.strip_prefix(GIT_HEADER) {
            let (old, new) = git_header_paths(rest)
                .ok_or_else(|| PatchError::at(line_no, "unparseable diff --git header"))?;
            sections.push(Section {
                start: offset,
                old_path: Some(old),
                new_path: Some(new),
            });
            state = State::Header {
                saw_new: false,
                plain: false,
            };
            continue;
        }

        let starts_plain = line.starts_with("--- ")
            && next_is_new_file
            && match state {
                State::Start | State::AfterHunk => true,
                State::Header { saw_new, .. } => saw_new,
                State::Hunk { .. } => false,
            };
        if starts_plain {
            sections.push(Section {
                start: offset,
                old_path: marker_path(&line[4..], "a/"),
                new_path: None,
            });
            state = State::Header {
                saw_new: false,
                plain: true,
            };
            continue;
        }

        match state {
            State::Start => {
                return Err(PatchError::at(line_no, "expected a file header"));
            }
            State::Header { saw_new, plain } => {
                let current = sections.last_mut().expect("header implies a section");
                if let Some(rest) = line.strip_prefix("--- ") {
                    current.old_path = marker_path(rest, "a/");
                } else if let Some(rest) = line.strip_prefix("+++ ") {
                    current.new_path = marker_path(rest, "b/");
                    state = State::Header {
                        saw_new: true,
                        plain,
                    };
                } else if line.starts_with("new file mode") {
                    current.old_path = None;
                } else if line.starts_with("deleted file mode") {
                    current.new_path = None;
                } else if let Some(rest) = line.strip_prefix("rename to ") {
                    current.new_path = Some(rest.to_string());
                } else if line.starts_with("@@") {
                    if plain && !saw_new {
                        return Err(PatchError::at(line_no, "hunk before +++ line"));
                    }
                    state = open_hunk(line, line_no)?;
                }
            }
            State::AfterHunk => {
                if line.starts_with("@@") {
                    state = open_hunk(line, line_no)?;
                } else if !line.starts_with('\\') {
                    return Err(PatchError::at(
                        line_no,
                        format!("unexpected line after hunk: {line:?}"),
                    ));
                }
            }
            State::Hunk { .. } => unreachable!("handled above"),
        }
    }

    match state {
        State::Hunk { .. } => {
            return Err(PatchError::at(lines.len() + 1, "patch ends inside a hunk"));
        }
        State::Header {
            plain: true,
            saw_new: false,
        } => {
            return Err(PatchError::at(lines.len() + 1, "missing +++ line"));
        }
        _ => {}
    }

    let ends = sections
        .iter()
        .skip(1)
        .map(|s| s.start)
        .chain(std::iter::once(patch.len()));
    Ok(sections
        .iter()
        .zip(ends)
        .map(|(s, end)| FilePatch {
            old_path: s.old_path.clone(),
            new_path: s.new_path.clone(),
            text: &patch[s.start..end],
        })
        .collect())
}

fn open_hunk(line: &str, line_no: usize) -> Result<State, PatchError> {
    let caps = hunk_header()
        .captures(line)
        .ok_or_else(|| PatchError::at(line_no, format!("bad hunk header: {line:?}")))?;
    let count = |i: usize| -> Result<u64, PatchError> {
        caps.get(i)
            .map(|m| m.as_str().parse::<u64>())
            .unwrap_or(Ok(1))
            .map_err(|_| PatchError::at(line_no, "hunk count out of range"))
    };
    let (old_left, new_left) = (count(2)?, count(4)?);
    Ok(if old_left == 0 && new_left == 0 {
        State::AfterHunk
    } else {
        State::Hunk { old_left, new_left }
    })
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(s)
}

/// Path from a `---`/`+++` line, `None` for `/dev/null`.
fn marker_path(rest: &str, prefix: &str) -> Option<String> {
    let raw = rest.split('\t').next().unwrap_or(rest).trim_end();
    let raw = unquote(raw);
    if raw == DEV_NULL {
        return None;
    }
    Some(raw.strip_prefix(prefix).unwrap_or(raw).to_string())
}

fn git_header_paths(rest: &str) -> Option<(String, String)> {
    let rest = rest.trim_end();
    // Symmetric "a/P b/P" is the common case and tolerates spaces in P.
    if let Some(body) = rest.strip_prefix("a/") {
        if body.len() % 2 == 1 {
            let half = (body.len() - 1) / 2;
            if body.is_char_boundary(half) {
                let (left, right) = body.split_at(half);
                if right.strip_prefix(" b/") == Some(left) {
                    return Some((left.to_string(), left.to_string()));
                }
            }
        }
        if let Some(pos) = body.rfind(" b/") {
            return Some((body[..pos].to_string(), body[pos + 3..].to_string()));
        }
    }
    let mut parts = rest.split(' ');
    let old = unquote(parts.next()?);
    let new = unquote(parts.next()?);
    Some((
        old.strip_prefix("a/").unwrap_or(old).to_string(),
        new.strip_prefix("b/").unwrap_or(new).to_string(),
    ))
}
