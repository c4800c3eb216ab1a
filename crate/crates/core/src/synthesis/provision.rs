//! Local bare-repository cache and build-context worktrees.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ingest::TaskCandidate;

#[derive(Debug, Error)]
pub enum ProvisionError {
    #[error("commit {commit} is not in {repo} even after a refresh")]
    MissingCommit { repo: String, commit: String },
    #[error("timed out after {0:?} waiting for the cache lock of {1}")]
    LockTimeout(Duration, String),
    #[error("network access needed for {0} but the cache is offline")]
    Offline(String),
    #[error("git {args} failed: {stderr}")]
    Git { args: String, stderr: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where repositories are cloned from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepoSource {
    /// `https://github.com/<owner>/<name>.git` style hosting.
    Remote { base_url: String },
    /// Repositories at `<dir>/<owner>__<name>`, used for tests and mirrors.
    LocalDir(PathBuf),
}

impl RepoSource {
    pub fn github() -> Self {
        Self::Remote { base_url: "https://github.com".into() }
    }

    pub fn url_for(&self, repo_id: &str) -> String {
        match self {
            Self::Remote { base_url } => format!("{}/{repo_id}.git", base_url.trim_end_matches('/')),
            Self::LocalDir(dir) => dir.join(repo_id.replace('/', "__")).display().to_string(),
        }
    }
}

/// Bare clones shared by every task of a repository. Clone and fetch are the
/// only operations that leave the machine; everything else reads the cache.
#[derive(Debug)]
pub struct RepoCache {
    root: PathBuf,
    source: RepoSource,
    lock_wait: Duration,
    network_ops: AtomicUsize,
    offline: AtomicBool,
}

fn git(args: &[&str], cwd: Option<&Path>) -> Result<String, ProvisionError> {
    let mut cmd = Command::new("git");
    if let Some(dir) = cwd {
        cmd.arg("-C").arg(dir);
    }
    let out = cmd
        .args(args)
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .output()?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(ProvisionError::Git {
            args: args.join(" "),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        })
    }
}

impl RepoCache {
    pub fn new(root: impl Into<PathBuf>, source: RepoSource) -> Self {
        Self {
            root: root.into(),
            source,
            lock_wait: Duration::from_secs(600),
            network_ops: AtomicUsize::new(0),
            offline: AtomicBool::new(false),
        }
    }

    pub fn with_lock_wait(mut self, wait: Duration) -> Self {
        self.lock_wait = wait;
        self
    }

    /// Clone and fetch operations performed so far.
    pub fn network_ops(&self) -> usize {
        self.network_ops.load(Ordering::SeqCst)
    }

    /// While offline any clone or fetch fails with [`ProvisionError::Offline`].
    pub fn set_offline(&self, offline: bool) {
        self.offline.store(offline, Ordering::SeqCst);
    }

    pub fn bare_path(&self, repo_id: &str) -> PathBuf {
        self.root.join(format!("{}.git", repo_id.replace('/', "__")))
    }

    fn network(&self, what: &str) -> Result<(), ProvisionError> {
        if self.offline.load(Ordering::SeqCst) {
            return Err(ProvisionError::Offline(what.to_string()));
        }
        self.network_ops.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    fn lock(&self, repo_id: &str) -> Result<File, ProvisionError> {
        fs::create_dir_all(&self.root)?;
        let path = self.root.join(format!("{}.lock", repo_id.replace('/', "__")));
        let file = File::options().create(true).truncate(false).write(true).open(path)?;
        let started = Instant::now();
        loop {
            match file.try_lock() {
                Ok(()) => return Ok(file),
                Err(fs::TryLockError::WouldBlock) if started.elapsed() < self.lock_wait => {
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(fs::TryLockError::WouldBlock) => {
                    return Err(ProvisionError::LockTimeout(self.lock_wait, repo_id.to_string()))
                }
                Err(fs::TryLockError::Error(e)) => return Err(e.into()),
            }
        }
    }

    fn has_commit(bare: &Path, commit: &str) -> bool {
        git(&["cat-file", "-e", &format!("{commit}^{{commit}}")], Some(bare)).is_ok()
    }

    /// Makes sure the bare clone exists and contains `commit`, fetching at
    /// most once.
    pub fn ensure_commit(&self, repo_id: &str, commit: &str) -> Result<PathBuf, ProvisionError> {
        let _guard = self.lock(repo_id)?;
        let bare = self.bare_path(repo_id);
        if !bare.join("HEAD").exists() {
            self.network(repo_id)?;
            let tmp = bare.with_extension("git.partial");
            let _ = fs::remove_dir_all(&tmp);
            git(
                &["clone", "--bare", "--quiet", &self.source.url_for(repo_id), &tmp.display().to_string()],
                None,
            )?;
            fs::rename(&tmp, &bare)?;
        }
        if Self::has_commit(&bare, commit) {
            return Ok(bare);
        }
        self.network(repo_id)?;
        git(
            &["fetch", "--quiet", "--tags", "origin", "+refs/heads/*:refs/heads/*"],
            Some(&bare),
        )?;
        if !Self::has_commit(&bare, commit) {
            let _ = git(&["fetch", "--quiet", "origin", commit], Some(&bare));
        }
        if Self::has_commit(&bare, commit) {
            Ok(bare)
        } else {
            Err(ProvisionError::MissingCommit { repo: repo_id.into(), commit: commit.into() })
        }
    }

    /// Materializes `<ctx>/repo` at the candidate's base commit and returns
    /// its path. Reuses an existing clean worktree at the same commit.
    pub fn provision(&self, candidate: &TaskCandidate, ctx: &Path) -> Result<PathBuf, ProvisionError> {
        let dest = ctx.join("repo");
        if dest.join(".git").exists() {
            let head = git(&["rev-parse", "HEAD"], Some(&dest)).unwrap_or_default();
            let dirty = git(&["status", "--porcelain"], Some(&dest)).map(|s| !s.is_empty()).unwrap_or(true);
            if head.trim() == candidate.base_commit && !dirty {
                return Ok(dest);
            }
        }
        let bare = self.ensure_commit(&candidate.repo_id, &candidate.base_commit)?;
        fs::create_dir_all(ctx)?;
        if dest.exists() {
            fs::remove_dir_all(&dest)?;
        }
        git(
            &[
                "clone",
                "--quiet",
                "--local",
                "--no-checkout",
                &bare.display().to_string(),
                &dest.display().to_string(),
            ],
            None,
        )?;
        git(&["checkout", "--quiet", "--detach", &candidate.base_commit], Some(&dest))?;
        git(&["remote", "remove", "origin"], Some(&dest))?;
        Ok(dest)
    }
}
