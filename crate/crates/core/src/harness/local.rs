//! A container engine built from Linux namespaces, for hosts without a
//! Docker daemon.
//!
//! Images are directories holding the `/testbed` tree and a pip user base.
//! Every run copies the image, then executes the script under
//! `unshare --mount` with the copies bind-mounted at `/testbed` and
//! `/opt/openswe`, a private `/tmp`, a read-only root and, unless network is
//! requested, an empty network namespace. CPU and memory limits use cgroups
//! when the hierarchy is writable. Storage limits are not enforced.
//!
//! Dockerfiles are interpreted, not built: `FROM openswe-python-<v>` maps to
//! the host Python, `COPY`/`ADD` may only target `/testbed`, `RUN`, `ENV`
//! and `WORKDIR` behave as usual and other instructions are ignored.
//! Requires root.

use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::docker::{exit_code, wait_with_timeout};
use super::engine::{BuildOutcome, ContainerEngine, ContainerInfo, EngineError, ImageInfo, RunOutcome, RunRequest};
use super::RunLimits;
use crate::fsutil::{dir_size, now_millis, write_atomic};
use crate::synthesis::shell::words;
use crate::synthesis::{instructions, BaseImageCatalog};

const SETUP: &str = r#"fail() { echo "forge-sandbox: $*" >&2; exit 121; }
tb=$1 us=$2 sh=$3 wd=$4; shift 4
for cg in ${FORGE_CGROUPS-}; do echo $$ > "$cg/cgroup.procs" || fail "cannot join $cg"; done
mount --bind "$tb" /testbed || fail "bind /testbed"
mount --bind "$us" /opt/openswe || fail "bind /opt/openswe"
mount --bind "$sh" /opt/conda || fail "bind /opt/conda"
if [ -f /opt/conda/etc/host-profile ]; then mount --bind /opt/conda/etc/host-profile /etc/profile || fail "bind profile"; fi
mount -t tmpfs -o mode=1777 tmpfs /tmp || fail "tmpfs /tmp"
mount -o remount,bind,ro / || fail "read-only root"
cd "$wd" 2>/dev/null || cd /testbed
exec env -i "$@"
"#;

const CONDA_SH: &str = r#"export PATH="/opt/conda/bin:$PATH"
conda() {
  case "$1" in
    activate|deactivate) export CONDA_DEFAULT_ENV="${2:-testbed}"; return 0 ;;
    *) command /opt/conda/bin/conda "$@" ;;
  esac
}
"#;

const CONDA_BIN: &str = r#"#!/bin/bash
if [ "$1" = run ]; then
  shift
  while [ $# -gt 0 ]; do
    case "$1" in
      -n|--name|-p|--prefix) shift 2 ;;
      --no-capture-output|--live-stream) shift ;;
      *) break ;;
    esac
  done
  exec "$@"
fi
echo "conda shim: ignoring 'conda $*'" >&2
exit 0
"#;

const PIP_BIN: &str = "#!/bin/sh\nexec python3 -m pip \"$@\"\n";

const ACTIVATE: &str = "export PATH=\"/opt/conda/bin:$PATH\"\nexport CONDA_DEFAULT_ENV=testbed\n";

/// Older git lacks `apply --allow-empty`; emulate it.
fn git_shim(real: &Path) -> String {
    format!(
        r#"#!/bin/bash
real={real}
if [ "$1" = apply ]; then
  args=(); allow=0
  for a in "$@"; do if [ "$a" = --allow-empty ]; then allow=1; else args+=("$a"); fi; done
  if [ $allow = 1 ]; then
    tmp=$(mktemp); cat > "$tmp"
    if [ ! -s "$tmp" ]; then rm -f "$tmp"; exit 0; fi
    "$real" "${{args[@]}}" < "$tmp"; rc=$?; rm -f "$tmp"; exit $rc
  fi
fi
exec "$real" "$@"
"#,
        real = real.display()
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageMeta {
    tag: String,
    python_version: String,
    env: BTreeMap<String, String>,
    workdir: String,
    created_ms: u64,
}

static SEQ: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct LocalEngine {
    state: PathBuf,
    catalog: BaseImageCatalog,
    build_timeout: Duration,
    cgroups: bool,
}

fn find_in_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|d| d.join(name))
        .find(|p| p.is_file() && !p.starts_with("/opt/conda"))
}

fn copy_tree(src: &Path, dst: &Path) -> Result<(), EngineError> {
    let out = Command::new("cp")
        .arg("-a")
        .arg("--reflink=auto")
        .arg(src)
        .arg(dst)
        .output()?;
    if out.status.success() {
        Ok(())
    } else {
        Err(EngineError::Command(String::from_utf8_lossy(&out.stderr).into_owned()))
    }
}

fn write_exec(path: &Path, body: &str) -> std::io::Result<()> {
    fs::write(path, body)?;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755))
}

fn tag_key(tag: &str) -> String {
    tag.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn base_env() -> BTreeMap<String, String> {
    [
        ("PATH", "/opt/conda/bin:/opt/openswe/bin:/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin"),
        ("HOME", "/tmp"),
        ("LANG", "C.UTF-8"),
        ("PYTHONUSERBASE", "/opt/openswe"),
        ("PIP_USER", "1"),
        ("PIP_DISABLE_PIP_VERSION_CHECK", "1"),
        ("CONDA_DEFAULT_ENV", "testbed"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Limits applied through cgroups for the duration of one run.
struct Cgroup {
    dirs: Vec<PathBuf>,
}

impl Cgroup {
    fn create(id: &str, limits: &RunLimits) -> Option<Cgroup> {
        let root = Path::new("/sys/fs/cgroup");
        let name = format!("forge-{id}");
        let mut dirs = Vec::new();
        let write = |p: PathBuf, v: String| fs::write(p, v).is_ok();
        if root.join("memory").is_dir() {
            let mem = root.join("memory").join(&name);
            if fs::create_dir(&mem).is_ok() {
                let ok = write(mem.join("memory.limit_in_bytes"), limits.memory_bytes.to_string());
                let _ = write(mem.join("memory.memsw.limit_in_bytes"), limits.memory_bytes.to_string());
                dirs.push(mem);
                if !ok {
                    return Cgroup { dirs }.discard();
                }
            }
            let cpu = root.join("cpu").join(&name);
            if root.join("cpu").is_dir() && fs::create_dir(&cpu).is_ok() {
                let _ = write(cpu.join("cpu.cfs_period_us"), "100000".into());
                let _ = write(cpu.join("cpu.cfs_quota_us"), (u64::from(limits.cpu_cores) * 100_000).to_string());
                dirs.push(cpu);
            }
        } else if root.join("cgroup.controllers").is_file() {
            let dir = root.join(&name);
            if fs::create_dir(&dir).is_ok() {
                let ok = write(dir.join("memory.max"), limits.memory_bytes.to_string());
                let _ = write(dir.join("cpu.max"), format!("{} 100000", u64::from(limits.cpu_cores) * 100_000));
                dirs.push(dir);
                if !ok {
                    return Cgroup { dirs }.discard();
                }
            }
        }
        (!dirs.is_empty()).then_some(Cgroup { dirs })
    }

    fn discard(self) -> Option<Cgroup> {
        drop(self);
        None
    }

    fn paths(&self) -> String {
        self.dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(" ")
    }

    fn kill_all(&self) {
        for dir in &self.dirs {
            if let Ok(procs) = fs::read_to_string(dir.join("cgroup.procs")) {
                for pid in procs.lines().filter_map(|l| l.trim().parse::<i32>().ok()) {
                    // SAFETY: kill has no memory-safety preconditions.
                    unsafe {
                        libc::kill(pid, libc::SIGKILL);
                    }
                }
            }
        }
    }
}

impl Drop for Cgroup {
    fn drop(&mut self) {
        for _ in 0..50 {
            self.kill_all();
            self.dirs.retain(|d| fs::remove_dir(d).is_err());
            if self.dirs.is_empty() {
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

struct Exec<'a> {
    testbed: &'a Path,
    user: &'a Path,
    workdir: &'a str,
    env: &'a BTreeMap<String, String>,
    argv: Vec<String>,
    stdin: Option<&'a str>,
    network: bool,
    limits: Option<&'a RunLimits>,
    timeout: Duration,
    log: &'a Path,
    id: &'a str,
}

impl LocalEngine {
    /// Prepares `state` and checks that mount namespaces are usable.
    pub fn new(state: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let state = state.into();
        for dir in ["images", "containers", "shim/bin", "shim/etc/profile.d"] {
            fs::create_dir_all(state.join(dir))?;
        }
        for mount_point in ["/testbed", "/opt/openswe", "/opt/conda"] {
            fs::create_dir_all(mount_point)
                .map_err(|e| EngineError::Unavailable(format!("cannot create {mount_point}: {e}")))?;
        }
        let probe = Command::new("unshare")
            .args(["--mount", "--propagation", "private", "true"])
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| EngineError::Unavailable(format!("unshare: {e}")))?;
        if !probe.status.success() {
            return Err(EngineError::Unavailable(format!(
                "mount namespaces unavailable: {}",
                String::from_utf8_lossy(&probe.stderr).trim()
            )));
        }
        let python = find_in_path("python3").ok_or_else(|| EngineError::Unavailable("python3 not found".into()))?;
        let git = find_in_path("git").ok_or_else(|| EngineError::Unavailable("git not found".into()))?;
        let engine = Self {
            state,
            catalog: BaseImageCatalog::standard(),
            build_timeout: Duration::from_secs(3600),
            cgroups: true,
        };
        engine.write_shim(&python, &git)?;
        Ok(engine)
    }

    /// Skip cgroup limits, for hosts where the hierarchy is read-only.
    pub fn without_cgroups(mut self) -> Self {
        self.cgroups = false;
        self
    }

    pub fn state_dir(&self) -> &Path {
        &self.state
    }

    fn write_shim(&self, python: &Path, git: &Path) -> std::io::Result<()> {
        let shim = self.state.join("shim");
        let bin = shim.join("bin");
        for name in ["python", "python3"] {
            let link = bin.join(name);
            let _ = fs::remove_file(&link);
            std::os::unix::fs::symlink(python, &link)?;
        }
        write_exec(&bin.join("pip"), PIP_BIN)?;
        write_exec(&bin.join("pip3"), PIP_BIN)?;
        write_exec(&bin.join("conda"), CONDA_BIN)?;
        write_exec(&bin.join("git"), &git_shim(git))?;
        fs::write(bin.join("activate"), ACTIVATE)?;
        fs::write(shim.join("etc/profile.d/conda.sh"), CONDA_SH)?;
        if let Ok(profile) = fs::read_to_string("/etc/profile") {
            fs::write(
                shim.join("etc/host-profile"),
                format!("{profile}\nexport PATH=\"/opt/conda/bin:$PATH\"\n"),
            )?;
        }
        Ok(())
    }

    fn image_dir(&self, tag: &str) -> PathBuf {
        self.state.join("images").join(tag_key(tag))
    }

    fn read_meta(dir: &Path) -> Option<ImageMeta> {
        serde_json::from_slice(&fs::read(dir.join("meta.json")).ok()?).ok()
    }

    fn exec(&self, x: Exec<'_>) -> Result<RunOutcome, EngineError> {
        let cgroup = match x.limits {
            Some(l) if self.cgroups => Cgroup::create(x.id, l),
            _ => None,
        };
        let log = fs::File::create(x.log)?;
        let mut cmd = Command::new("unshare");
        cmd.args(["--mount", "--propagation", "private"]);
        if !x.network {
            cmd.arg("--net");
        }
        cmd.args(["--", "bash", "-c", SETUP, "forge-sandbox"])
            .arg(x.testbed)
            .arg(x.user)
            .arg(self.state.join("shim"))
            .arg(x.workdir);
        cmd.args(x.env.iter().map(|(k, v)| format!("{k}={v}")));
        cmd.args(&x.argv);
        cmd.env_clear()
            .env("PATH", "/usr/sbin:/usr/bin:/sbin:/bin")
            .env("FORGE_CGROUPS", cgroup.as_ref().map(Cgroup::paths).unwrap_or_default())
            .stdin(if x.stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0);
        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| EngineError::Unavailable(format!("unshare: {e}")))?;
        if let (Some(mut pipe), Some(text)) = (child.stdin.take(), x.stdin) {
            let text = text.to_string();
            // A writer thread keeps a script larger than the pipe buffer
            // from blocking the timeout loop.
            std::thread::spawn(move || {
                use std::io::Write;
                let _ = pipe.write_all(text.as_bytes());
            });
        }
        let pgid = child.id() as i32;
        let status = wait_with_timeout(&mut child, x.timeout)?;
        // Anything left in the group or cgroup dies with the container.
        // SAFETY: killpg has no memory-safety preconditions.
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
        if let Some(cg) = &cgroup {
            cg.kill_all();
        }
        let code = match status {
            Some(c) => c,
            None => child.wait().map(exit_code).unwrap_or(-1),
        };
        let duration = started.elapsed();
        drop(cgroup);
        let output = String::from_utf8_lossy(&fs::read(x.log)?).into_owned();
        if code == 121 && output.contains("forge-sandbox: ") {
            return Err(EngineError::Command(output));
        }
        Ok(RunOutcome { output, exit_code: code, timed_out: status.is_none(), duration })
    }

    fn build_into(&self, ctx: &Path, dir: &Path, tag: &str, log: &mut String) -> Result<Option<ImageMeta>, EngineError> {
        let text = fs::read_to_string(ctx.join("Dockerfile"))?;
        let steps = instructions(&text);
        let testbed = dir.join("testbed");
        let user = dir.join("user");
        fs::create_dir_all(&testbed)?;
        fs::create_dir_all(&user)?;
        let mut meta = ImageMeta {
            tag: tag.to_string(),
            python_version: String::new(),
            env: base_env(),
            workdir: "/testbed".into(),
            created_ms: now_millis(),
        };
        let total = steps.len();
        for (n, step) in steps.iter().enumerate() {
            log.push_str(&format!("Step {}/{total} : {} {}\n", n + 1, step.keyword, step.args));
            let args: Vec<String> = words(&step.args).into_iter().filter(|w| !w.starts_with("--")).collect();
            if meta.python_version.is_empty() && !matches!(step.keyword.as_str(), "FROM" | "ARG") {
                log.push_str("error: the Dockerfile must start with FROM\n");
                return Ok(None);
            }
            match step.keyword.as_str() {
                "FROM" => {
                    if !meta.python_version.is_empty() {
                        log.push_str("error: multi-stage builds are not supported by the local engine\n");
                        return Ok(None);
                    }
                    let image = args.first().cloned().unwrap_or_default();
                    match self.catalog.version_of_image(&image) {
                        Some(v) => meta.python_version = v,
                        None => {
                            log.push_str(&format!(
                                "error: pull access denied for {image}: base image not available\n"
                            ));
                            return Ok(None);
                        }
                    }
                }
                "COPY" | "ADD" => {
                    if args.len() < 2 {
                        log.push_str("error: COPY needs a source and a destination\n");
                        return Ok(None);
                    }
                    let dest = &args[args.len() - 1];
                    let dest = if dest.starts_with('/') {
                        dest.clone()
                    } else {
                        format!("{}/{dest}", meta.workdir.trim_end_matches('/'))
                    };
                    let Some(rel) = dest.strip_prefix("/testbed").filter(|r| r.is_empty() || r.starts_with('/'))
                    else {
                        log.push_str(&format!("error: COPY destination {dest} is outside /testbed\n"));
                        return Ok(None);
                    };
                    let target = testbed.join(rel.trim_start_matches('/'));
                    for src in &args[..args.len() - 1] {
                        let from = ctx.join(src);
                        if !from.starts_with(ctx) || src.contains("..") || !from.exists() {
                            log.push_str(&format!("error: COPY source {src} not found in build context\n"));
                            return Ok(None);
                        }
                        if from.is_dir() {
                            fs::create_dir_all(&target)?;
                            copy_tree(&from.join("."), &target)?;
                        } else {
                            let into = if dest.ends_with('/') || target.is_dir() {
                                fs::create_dir_all(&target)?;
                                target.join(from.file_name().unwrap_or_default())
                            } else {
                                if let Some(p) = target.parent() {
                                    fs::create_dir_all(p)?;
                                }
                                target.clone()
                            };
                            copy_tree(&from, &into)?;
                        }
                    }
                }
                "WORKDIR" => {
                    let w = args.first().cloned().unwrap_or_else(|| "/".into());
                    let w = if w.starts_with('/') { w } else { format!("{}/{w}", meta.workdir) };
                    if let Some(rel) = w.strip_prefix("/testbed") {
                        fs::create_dir_all(testbed.join(rel.trim_start_matches('/')))?;
                    }
                    meta.workdir = w;
                }
                "ENV" => {
                    let w = words(&step.args);
                    if w.first().is_some_and(|f| f.contains('=')) {
                        for pair in &w {
                            if let Some((k, v)) = pair.split_once('=') {
                                meta.env.insert(k.to_string(), v.to_string());
                            }
                        }
                    } else if let Some((k, rest)) = w.split_first() {
                        meta.env.insert(k.clone(), rest.join(" "));
                    }
                }
                "RUN" => {
                    let argv = match serde_json::from_str::<Vec<String>>(step.args.trim()) {
                        Ok(v) if step.args.trim_start().starts_with('[') => v,
                        _ => vec!["/bin/sh".into(), "-c".into(), step.args.clone()],
                    };
                    let id = format!("build-{}-{}", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed));
                    let step_log = dir.with_extension("step.log");
                    let out = self.exec(Exec {
                        testbed: &testbed,
                        user: &user,
                        workdir: &meta.workdir,
                        env: &meta.env,
                        argv,
                        stdin: None,
                        network: true,
                        limits: None,
                        timeout: self.build_timeout,
                        log: &step_log,
                        id: &id,
                    });
                    let _ = fs::remove_file(&step_log);
                    let out = out?;
                    log.push_str(&out.output);
                    if out.timed_out || out.exit_code != 0 {
                        log.push_str(&format!(
                            "error: RUN {} returned a non-zero code: {}\n",
                            step.args, out.exit_code
                        ));
                        return Ok(None);
                    }
                }
                other => log.push_str(&format!("note: {other} has no effect in the local engine\n")),
            }
        }
        if meta.python_version.is_empty() {
            log.push_str("error: no FROM instruction\n");
            return Ok(None);
        }
        Ok(Some(meta))
    }
}

impl ContainerEngine for LocalEngine {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        let dir = self.image_dir(tag);
        let partial = dir.with_extension(format!("partial-{}", SEQ.fetch_add(1, Ordering::Relaxed)));
        let _ = fs::remove_dir_all(&partial);
        fs::create_dir_all(&partial)?;
        let mut log = String::new();
        let result = self.build_into(ctx, &partial, tag, &mut log);
        match result {
            Ok(Some(meta)) => {
                write_atomic(&partial.join("meta.json"), &serde_json::to_vec_pretty(&meta).expect("meta"))?;
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                fs::rename(&partial, &dir)?;
                log.push_str(&format!("Successfully tagged {tag}\n"));
                Ok(BuildOutcome { success: true, log })
            }
            Ok(None) => {
                let _ = fs::remove_dir_all(&partial);
                Ok(BuildOutcome { success: false, log })
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&partial);
                Err(e)
            }
        }
    }

    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        let image = self.image_dir(req.image);
        let meta = Self::read_meta(&image).ok_or_else(|| EngineError::NoSuchImage(req.image.to_string()))?;
        let id = format!("{}-{}-{}", std::process::id(), now_millis(), SEQ.fetch_add(1, Ordering::Relaxed));
        let cdir = self.state.join("containers").join(&id);
        fs::create_dir_all(&cdir)?;
        fs::write(cdir.join("pid"), std::process::id().to_string())?;
        let result = copy_tree(&image.join("testbed"), &cdir.join("testbed"))
            .and_then(|_| copy_tree(&image.join("user"), &cdir.join("user")))
            .and_then(|_| {
                self.exec(Exec {
                    testbed: &cdir.join("testbed"),
                    user: &cdir.join("user"),
                    workdir: &meta.workdir,
                    env: &meta.env,
                    argv: vec!["bash".into(), "-s".into()],
                    stdin: Some(req.script),
                    network: req.network,
                    limits: Some(req.limits),
                    timeout: req.limits.wall_clock_timeout,
                    log: &cdir.join("output.log"),
                    id: &id,
                })
            });
        let _ = fs::remove_dir_all(&cdir);
        result
    }

    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.state.join("images"))? {
            let path = entry?.path();
            if let Some(meta) = Self::read_meta(&path) {
                out.push(ImageInfo { tag: meta.tag, size_bytes: dir_size(&path), created_ms: meta.created_ms });
            }
        }
        out.sort_by(|a, b| a.tag.cmp(&b.tag));
        Ok(out)
    }

    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        let dir = self.image_dir(tag);
        if !dir.join("meta.json").exists() {
            return Err(EngineError::NoSuchImage(tag.to_string()));
        }
        let size = dir_size(&dir);
        fs::remove_dir_all(&dir)?;
        Ok(size)
    }

    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.state.join("containers"))? {
            let path = entry?.path();
            let pid: Option<i32> = fs::read_to_string(path.join("pid")).ok().and_then(|p| p.trim().parse().ok());
            // SAFETY: signal 0 only checks for existence.
            let running = pid.is_some_and(|p| unsafe { libc::kill(p, 0) } == 0);
            out.push(ContainerInfo {
                id: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                running,
                size_bytes: dir_size(&path),
            });
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        if id.contains('/') || id.starts_with('.') {
            return Err(EngineError::Command(format!("bad container id {id}")));
        }
        let dir = self.state.join("containers").join(id);
        let size = dir_size(&dir);
        fs::remove_dir_all(&dir)?;
        Ok(size)
    }

    /// `registry` is a directory; the image is copied into it.
    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        let src = self.image_dir(tag);
        if !src.join("meta.json").exists() {
            return Err(EngineError::NoSuchImage(tag.to_string()));
        }
        let reg = Path::new(registry);
        if !reg.is_dir() {
            return Err(EngineError::Command(format!("registry {registry} is not reachable")));
        }
        let dest = reg.join(tag_key(tag));
        if dest.exists() {
            fs::remove_dir_all(&dest)?;
        }
        copy_tree(&src, &dest)?;
        Ok(format!("{}/{tag}", registry.trim_end_matches('/')))
    }
}
