use std::fs::{self, File};
use std::io::Read;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ExplorationConfig;

/// Appended to digests cut at the size cap.
pub const TRUNCATION_SENTINEL: &str = "\n[... truncated ...]\n";

/// Bytes inspected by the binary-content heuristic.
const BINARY_SNIFF_BYTES: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error("path {0:?} resolves outside the repository")]
    SandboxViolation(String),
    #[error("path {0:?} does not exist")]
    NotFound(String),
    #[error("path {0:?} is not a directory")]
    NotADirectory(String),
    #[error("path {0:?} is not a regular file")]
    NotAFile(String),
    #[error("path {0:?} looks like binary content")]
    UnsupportedContent(String),
    #[error("path {0:?} is outside the requested scope")]
    OutOfScope(String),
    #[error("io error on {path:?}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    File,
    Dir,
    Symlink,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirEntryInfo {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
}

/// Per-task exploration state. All reads stay under `repo_root`.
#[derive(Debug, Clone)]
pub struct ExplorationState {
    repo_root: PathBuf,
    pub rounds_used: usize,
    pub max_rounds: usize,
    pub focus_request: Option<String>,
    /// `(repo-relative path, digest text)` in collection order.
    pub collected: Vec<(String, String)>,
    digest_cap: usize,
    search_limit: usize,
}

impl ExplorationState {
    pub fn new(
        repo_root: &Path,
        config: &ExplorationConfig,
        focus_request: Option<String>,
    ) -> Result<Self, ExploreError> {
        let repo_root = repo_root
            .canonicalize()
            .map_err(|_| ExploreError::NotFound(repo_root.display().to_string()))?;
        Ok(Self {
            repo_root,
            rounds_used: 0,
            max_rounds: config.max_rounds,
            focus_request,
            collected: Vec::new(),
            digest_cap: config.digest_cap,
            search_limit: config.search_limit,
        })
    }

    pub fn repo_root(&self) -> &Path {
        &self.repo_root
    }

    /// Resolves a repository path, rejecting anything that escapes the root
    /// lexically or through symlinks.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, ExploreError> {
        let requested = Path::new(path);
        let joined = if requested.is_absolute() {
            requested.to_path_buf()
        } else {
            self.repo_root.join(requested)
        };
        let mut normal = PathBuf::new();
        for comp in joined.components() {
            match comp {
                Component::ParentDir => {
                    if !normal.pop() {
                        return Err(ExploreError::SandboxViolation(path.to_string()));
                    }
                }
                Component::CurDir => {}
                other => normal.push(other),
            }
        }
        if !normal.starts_with(&self.repo_root) {
            return Err(ExploreError::SandboxViolation(path.to_string()));
        }
        if fs::symlink_metadata(&normal).is_err() {
            return Err(ExploreError::NotFound(path.to_string()));
        }
        let canonical = normal
            .canonicalize()
            .map_err(|_| ExploreError::NotFound(path.to_string()))?;
        if !canonical.starts_with(&self.repo_root) {
            return Err(ExploreError::SandboxViolation(path.to_string()));
        }
        Ok(canonical)
    }

    pub fn relative(&self, abs: &Path) -> String {
        let rel = abs.strip_prefix(&self.repo_root).unwrap_or(abs);
        let s = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if s.is_empty() {
            ".".to_string()
        } else {
            s
        }
    }

    /// Direct children of a directory, sorted by name.
    pub fn browse(&self, path: &str) -> Result<Vec<DirEntryInfo>, ExploreError> {
        let dir = self.resolve(path)?;
        if !dir.is_dir() {
            return Err(ExploreError::NotADirectory(path.to_string()));
        }
        let io = |e: std::io::Error| ExploreError::Io {
            path: path.to_string(),
            message: e.to_string(),
        };
        let mut entries = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io)? {
            let entry = entry.map_err(io)?;
            let meta = fs::symlink_metadata(entry.path()).map_err(io)?;
            let ft = meta.file_type();
            let kind = if ft.is_symlink() {
                EntryKind::Symlink
            } else if ft.is_dir() {
                EntryKind::Dir
            } else if ft.is_file() {
                EntryKind::File
            } else {
                EntryKind::Other
            };
            entries.push(DirEntryInfo {
                name: entry.file_name().to_string_lossy().into_owned(),
                kind,
                size: if kind == EntryKind::File { meta.len() } else { 0 },
            });
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(entries)
    }

    /// Repository files whose relative path contains `pattern`, ignoring
    /// case; sorted and capped at the configured limit. `.git` is skipped
    /// and symlinks are not followed.
    pub fn search(&self, pattern: &str) -> Vec<String> {
        if pattern.is_empty() {
            return Vec::new();
        }
        let needle = pattern.to_lowercase();
        let mut hits: Vec<String> = walkdir::WalkDir::new(&self.repo_root)
            .follow_links(false)
            .into_iter()
            .filter_entry(|e| e.file_name() != ".git")
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| self.relative(e.path()))
            .filter(|rel| rel.to_lowercase().contains(&needle))
            .collect();
        hits.sort();
        hits.truncate(self.search_limit);
        hits
    }

    /// Reads a text file up to the digest cap and records it.
    pub fn digest(&mut self, path: &str) -> Result<String, ExploreError> {
        let file = self.resolve(path)?;
        if !file.is_file() {
            return Err(ExploreError::NotAFile(path.to_string()));
        }
        let io = |e: std::io::Error| ExploreError::Io {
            path: path.to_string(),
            message: e.to_string(),
        };
        let len = fs::metadata(&file).map_err(io)?.len() as usize;
        let mut bytes = Vec::with_capacity(len.min(self.digest_cap));
        File::open(&file)
            .map_err(io)?
            .take(self.digest_cap as u64)
            .read_to_end(&mut bytes)
            .map_err(io)?;
        if bytes[..bytes.len().min(BINARY_SNIFF_BYTES)].contains(&0) {
            return Err(ExploreError::UnsupportedContent(path.to_string()));
        }
        let truncated = len > bytes.len();
        let mut text = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => {
                let valid = e.utf8_error().valid_up_to();
                let mut bytes = e.into_bytes();
                if truncated && bytes.len() - valid < 4 {
                    bytes.truncate(valid);
                    String::from_utf8(bytes).expect("prefix is valid")
                } else {
                    String::from_utf8_lossy(&bytes).into_owned()
                }
            }
        };
        if truncated {
            text.push_str(TRUNCATION_SENTINEL);
        }
        self.collected.push((self.relative(&file), text.clone()));
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, ExplorationState) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("repo");
        fs::create_dir_all(root.join("src/pkg")).unwrap();
        fs::create_dir_all(root.join("tests")).unwrap();
        fs::create_dir_all(root.join(".git")).unwrap();
        fs::write(root.join("README.md"), "Run `pytest tests/`\n").unwrap();
        fs::write(root.join("requirements.txt"), "requests==2.31.0\n").unwrap();
        fs::write(root.join("src/pkg/mod.py"), "x = 1\n").unwrap();
        fs::write(root.join("src/top.py"), "y = 2\n").unwrap();
        fs::write(root.join("tests/test_api.py"), "def test(): pass\n").unwrap();
        fs::write(root.join(".git/config"), "[core]\n").unwrap();
        fs::write(root.join("logo.png"), b"\x89PNG\0\0data").unwrap();
        fs::write(dir.path().join("secret.txt"), "outside").unwrap();
        std::os::unix::fs::symlink(dir.path().join("secret.txt"), root.join("leak.txt")).unwrap();
        let state = ExplorationState::new(&root, &ExplorationConfig::default(), None).unwrap();
        (dir, state)
    }

    #[test]
    fn browse_root_and_subdir() {
        let (_d, s) = fixture();
        let names: Vec<_> = s.browse(".").unwrap().into_iter().map(|e| e.name).collect();
        for n in ["README.md", "src", "tests"] {
            assert!(names.contains(&n.to_string()));
        }
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);

        // Depth-1 oracle via read_dir.
        let mut expected: Vec<String> = fs::read_dir(s.repo_root().join("src"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        expected.sort();
        let got: Vec<_> = s.browse("src").unwrap().into_iter().map(|e| e.name).collect();
        assert_eq!(got, expected);
        assert_eq!(got, ["pkg", "top.py"]);
    }

    #[test]
    fn escapes_are_rejected() {
        let (_d, s) = fixture();
        assert!(matches!(s.browse("../.."), Err(ExploreError::SandboxViolation(_))));
        assert!(matches!(s.browse("/etc"), Err(ExploreError::SandboxViolation(_))));
        assert!(matches!(s.resolve("leak.txt"), Err(ExploreError::SandboxViolation(_))));
        assert!(matches!(s.browse("nope"), Err(ExploreError::NotFound(_))));
        assert!(s.resolve("src/../README.md").is_ok());
    }

    #[test]
    fn search_matches_walk_oracle() {
        let (_d, s) = fixture();
        assert_eq!(s.search("requirements"), ["requirements.txt"]);
        assert!(s.search("zzz-absent").is_empty());
        assert!(s.search("TEST").contains(&"tests/test_api.py".to_string()));
        assert!(s.search("config").is_empty(), ".git is skipped");
    }

    #[test]
    fn digest_records_and_rejects_binary() {
        let (_d, mut s) = fixture();
        let text = s.digest("README.md").unwrap();
        assert_eq!(text, "Run `pytest tests/`\n");
        assert_eq!(s.collected.len(), 1);
        assert_eq!(s.collected[0].0, "README.md");
        assert!(matches!(s.digest("logo.png"), Err(ExploreError::UnsupportedContent(_))));
        assert!(matches!(s.digest("src"), Err(ExploreError::NotAFile(_))));
        assert_eq!(s.collected.len(), 1);
    }

    #[test]
    fn oversize_is_truncated_with_sentinel() {
        let (_d, mut s) = fixture();
        let big = "a".repeat(10 * 1024 * 1024);
        fs::write(s.repo_root().join("big.txt"), &big).unwrap();
        let text = s.digest("big.txt").unwrap();
        assert_eq!(text.len(), 64 * 1024 + TRUNCATION_SENTINEL.len());
        assert!(text.ends_with(TRUNCATION_SENTINEL));
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let (_d, mut s) = fixture();
        let cap = ExplorationConfig::default().digest_cap;
        let text = format!("{}é tail", "a".repeat(cap - 1));
        fs::write(s.repo_root().join("utf.txt"), &text).unwrap();
        let out = s.digest("utf.txt").unwrap();
        assert_eq!(out, format!("{}{TRUNCATION_SENTINEL}", "a".repeat(cap - 1)));
    }
}
