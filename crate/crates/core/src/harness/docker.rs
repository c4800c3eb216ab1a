use std::io::{Read, Seek, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use super::engine::{BuildOutcome, ContainerEngine, ContainerInfo, EngineError, ImageInfo, RunOutcome, RunRequest};
use crate::fsutil::now_millis;

/// Drives the `docker` command-line client.
#[derive(Debug, Clone)]
pub struct DockerEngine {
    binary: PathBuf,
    /// Pass `--storage-opt size=` on runs. Only some storage drivers accept it.
    pub storage_opt: bool,
    /// Prefix of container names created by this engine.
    pub name_prefix: String,
}

static SEQ: AtomicU64 = AtomicU64::new(0);

pub(crate) fn wait_with_timeout(child: &mut Child, timeout: Duration) -> std::io::Result<Option<i32>> {
    let started = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(exit_code(status)));
        }
        if started.elapsed() >= timeout {
            return Ok(None);
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub(crate) fn exit_code(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

impl Default for DockerEngine {
    fn default() -> Self {
        Self::new("docker")
    }
}

impl DockerEngine {
    pub fn new(binary: impl Into<PathBuf>) -> Self {
        Self { binary: binary.into(), storage_opt: true, name_prefix: "forge-".into() }
    }

    fn cmd(&self) -> Command {
        Command::new(&self.binary)
    }

    fn output(&self, args: &[&str]) -> Result<String, EngineError> {
        let out = self
            .cmd()
            .args(args)
            .output()
            .map_err(|e| EngineError::Unavailable(format!("{}: {e}", self.binary.display())))?;
        if out.status.success() {
            Ok(String::from_utf8_lossy(&out.stdout).into_owned())
        } else {
            let err = String::from_utf8_lossy(&out.stderr).trim().to_string();
            if err.contains("Cannot connect to the Docker daemon") {
                Err(EngineError::Unavailable(err))
            } else {
                Err(EngineError::Command(format!("docker {}: {err}", args.join(" "))))
            }
        }
    }

    /// Arguments for `docker run`, without the binary.
    pub fn run_args(&self, name: &str, req: &RunRequest<'_>) -> Vec<String> {
        let mut args = vec![
            "run".to_string(),
            "-i".into(),
            "--name".into(),
            name.into(),
            "--cpus".into(),
            req.limits.cpu_cores.to_string(),
            "--memory".into(),
            req.limits.memory_bytes.to_string(),
            "--memory-swap".into(),
            req.limits.memory_bytes.to_string(),
        ];
        if self.storage_opt {
            args.push("--storage-opt".into());
            args.push(format!("size={}", req.limits.storage_bytes));
        }
        if !req.network {
            args.push("--network".into());
            args.push("none".into());
        }
        args.extend([req.image.to_string(), "bash".into(), "-s".into()]);
        args
    }
}

impl ContainerEngine for DockerEngine {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        let out = self
            .cmd()
            .args(["build", "--progress", "plain", "-t", tag])
            .arg(ctx)
            .output()
            .map_err(|e| EngineError::Unavailable(e.to_string()))?;
        let mut log = String::from_utf8_lossy(&out.stdout).into_owned();
        log.push_str(&String::from_utf8_lossy(&out.stderr));
        if log.contains("Cannot connect to the Docker daemon") {
            return Err(EngineError::Unavailable(log));
        }
        Ok(BuildOutcome { success: out.status.success(), log })
    }

    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        let name = format!(
            "{}{}-{}-{}",
            self.name_prefix,
            std::process::id(),
            now_millis(),
            SEQ.fetch_add(1, Ordering::Relaxed)
        );
        let mut capture = tempfile_handle()?;
        let started = Instant::now();
        let mut child = self
            .cmd()
            .args(self.run_args(&name, req))
            .stdin(Stdio::piped())
            .stdout(capture.try_clone()?)
            .stderr(capture.try_clone()?)
            .spawn()
            .map_err(|e| EngineError::Unavailable(e.to_string()))?;
        if let Some(mut stdin) = child.stdin.take() {
            let _ = stdin.write_all(req.script.as_bytes());
        }
        let status = wait_with_timeout(&mut child, req.limits.wall_clock_timeout);
        let timed_out = matches!(status, Ok(None));
        if timed_out {
            let _ = self.cmd().args(["kill", &name]).output();
            let _ = child.kill();
        }
        let code = match status {
            Ok(Some(c)) => c,
            _ => child.wait().map(exit_code).unwrap_or(-1),
        };
        let _ = self.cmd().args(["rm", "-f", &name]).output();
        let mut output = String::new();
        capture.rewind()?;
        let mut bytes = Vec::new();
        capture.read_to_end(&mut bytes)?;
        output.push_str(&String::from_utf8_lossy(&bytes));
        // 125 is the client failing before the container ran.
        if code == 125 && output.contains("docker") && !output.contains("OPENSWE_EXIT_CODE") {
            return Err(EngineError::Command(output));
        }
        Ok(RunOutcome { output, exit_code: code, timed_out, duration: started.elapsed() })
    }

    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        let out = self.output(&["image", "ls", "--format", "{{.Repository}}:{{.Tag}}", "openswe/*"])?;
        let mut infos = Vec::new();
        for tag in out.lines().map(str::trim).filter(|t| !t.is_empty()) {
            let meta = self.output(&["image", "inspect", "--format", "{{.Size}} {{.Created}}", tag])?;
            let mut parts = meta.split_whitespace();
            let size_bytes = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
            infos.push(ImageInfo { tag: tag.to_string(), size_bytes, created_ms: 0 });
        }
        Ok(infos)
    }

    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        let size = self
            .output(&["image", "inspect", "--format", "{{.Size}}", tag])
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        self.output(&["rmi", "-f", tag])?;
        Ok(size)
    }

    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        let filter = format!("name={}", self.name_prefix);
        let out = self.output(&["ps", "-a", "--filter", &filter, "--format", "{{.ID}} {{.State}}"])?;
        Ok(out
            .lines()
            .filter_map(|l| {
                let (id, state) = l.split_once(' ')?;
                Some(ContainerInfo { id: id.into(), running: state.trim() == "running", size_bytes: 0 })
            })
            .collect())
    }

    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        self.output(&["rm", "-f", id])?;
        Ok(0)
    }

    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        let remote = format!("{}/{tag}", registry.trim_end_matches('/'));
        self.output(&["tag", tag, &remote])?;
        self.output(&["push", &remote])?;
        Ok(remote)
    }
}

fn tempfile_handle() -> Result<std::fs::File, EngineError> {
    let path = std::env::temp_dir().join(format!(
        "forge-run-{}-{}.log",
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    let file = std::fs::File::options().read(true).write(true).create_new(true).open(&path)?;
    let _ = std::fs::remove_file(&path);
    Ok(file)
}
