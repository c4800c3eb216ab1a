//! Append-only line-delimited store for collected pull requests, plus the
//! candidate file format (one JSON `TaskCandidate` per line).

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{RawPullRequest, TaskCandidate};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Decode {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct IngestStore {
    root: PathBuf,
}

impl IngestStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file_for(&self, repo_id: &str) -> PathBuf {
        self.root.join(format!("{}.jsonl", repo_id.replace('/', "__")))
    }

    /// Appends records under an exclusive lock on the repo's file. Records
    /// whose PR number is already stored are skipped; returns how many were
    /// written.
    pub fn append(&self, repo_id: &str, records: &[RawPullRequest]) -> Result<usize, StoreError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let path = self.file_for(repo_id);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;
        let known = read_pr_numbers(&path)?;
        let mut buf = String::new();
        let mut written = 0;
        for r in records.iter().filter(|r| !known.contains(&r.pr_number)) {
            buf.push_str(&serde_json::to_string(r).expect("record serializes"));
            buf.push('\n');
            written += 1;
        }
        file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))?;
        file.unlock().map_err(io_err(&path))?;
        Ok(written)
    }

    /// Every stored record, files in name order, lines in file order.
    pub fn read_all(&self) -> Result<Vec<RawPullRequest>, StoreError> {
        let mut files: Vec<PathBuf> = match fs::read_dir(&self.root) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read_jsonl::<RawPullRequest>(&f)?);
        }
        Ok(out)
    }
}

fn read_pr_numbers(path: &Path) -> Result<BTreeSet<u64>, StoreError> {
    Ok(read_jsonl::<RawPullRequest>(path)?
        .into_iter()
        .map(|r| r.pr_number)
        .collect())
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Decode {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes `items` as JSON lines via a temp file and rename.
pub(crate) fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("item serializes"));
        buf.push('\n');
    }
    crate::fsutil::write_atomic(path, buf.as_bytes()).map_err(io_err(path))
}

pub fn write_candidates(path: &Path, candidates: &[TaskCandidate]) -> Result<(), StoreError> {
    write_jsonl(path, candidates)
}

pub fn read_candidates(path: &Path) -> Result<Vec<TaskCandidate>, StoreError> {
    read_jsonl(path)
}
