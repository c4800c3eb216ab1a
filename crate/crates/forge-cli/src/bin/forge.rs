//! Environment synthesis driver: single runs, queue workers and curation.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::curation::{curate, load_rollouts, CurationConfig};
use forge_core::fleet::{
    worker_loop, ClientFactory, ForgeExecutor, MeteredEngine, Metrics, NoopExecutor, Queue, QueueState, QueueTask,
    TaskExecutor, WorkerConfig, WorkerStatus,
};
use forge_core::fsutil::now_millis;
use forge_core::harness::{ContainerEngine, DockerEngine, ImageCache, LocalEngine, PrunePolicy};
use forge_core::ingest::read_candidates;
use forge_core::modelio::{HttpChatClient, ModelClient, ModelConfig, ScriptedClient, Transcript};
use forge_core::orchestrator::LoopConfig;
use forge_core::orchestrator::TaskStore;
use forge_core::par::Exec;
use forge_core::synthesis::{RepoCache, RepoSource};
use tracing::info;

#[derive(Parser)]
#[command(name = "forge", about = "Synthesize and validate container environments for pull-request tasks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineKind {
    Docker,
    /// Namespace sandbox; needs root, no daemon.
    Local,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, value_enum, default_value = "docker")]
    engine: EngineKind,
    /// Engine state, repository mirrors and the image cache live here.
    #[arg(long, default_value = "forge-state")]
    state: PathBuf,
    /// Clone repositories from `<dir>/<owner>__<name>` instead of GitHub.
    #[arg(long)]
    repos_from: Option<PathBuf>,
    /// Replay `<dir>/<task_id>.json` transcripts instead of calling a model.
    #[arg(long)]
    mock_transcripts: Option<PathBuf>,
    /// JSON model endpoint configuration.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    max_iterations: u32,
    /// Push accepted images to this registry.
    #[arg(long)]
    registry: Option<String>,
    /// Wall-clock limit of one evaluation run.
    #[arg(long)]
    run_timeout_secs: Option<u64>,
    /// Re-run both conditions after acceptance.
    #[arg(long)]
    double_run: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the synthesis loop for every candidate in a file.
    Run {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Add candidates to a queue.
    Enqueue {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Claim and run queued tasks until stopped.
    Worker {
        #[arg(long)]
        id: String,
        #[arg(long)]
        queue: PathBuf,
        /// Task artifacts go here.
        #[arg(long, default_value = "forge-out")]
        out: PathBuf,
        #[arg(long)]
        metrics_addr: Option<SocketAddr>,
        #[arg(long, default_value_t = 90 * 60)]
        lease_ttl_secs: u64,
        #[arg(long, default_value_t = 5000)]
        poll_ms: u64,
        #[arg(long, default_value_t = 60)]
        reap_interval_secs: u64,
        #[arg(long, default_value_t = 600)]
        prune_interval_secs: u64,
        /// Exit once nothing is pending or leased.
        #[arg(long)]
        exit_when_drained: bool,
        /// Skip synthesis and only sleep this long per task.
        #[arg(long)]
        noop_delay_ms: Option<u64>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Return expired leases to the queue.
    Reap {
        #[arg(long)]
        queue: PathBuf,
    },
    /// Queue counts and worker heartbeats as JSON.
    Status {
        #[arg(long)]
        queue: PathBuf,
    },
    /// Select rollouts by pass count and export sanitized trajectories.
    Curate {
        #[arg(long)]
        rollouts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        keep: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        attempts: u32,
        /// Reject trajectories with an action containing this text.
        #[arg(long = "forbid", default_value = "git pull")]
        forbidden: Vec<String>,
        #[arg(long)]
        sequential: bool,
    },
}

fn engine(args: &PipelineArgs) -> Result<Box<dyn ContainerEngine>> {
    Ok(match args.engine {
        EngineKind::Docker => Box::new(DockerEngine::new("docker")),
        EngineKind::Local => Box::new(LocalEngine::new(args.state.join("engine"))?),
    })
}

fn client_factory(args: &PipelineArgs) -> Result<ClientFactory> {
    if let Some(dir) = args.mock_transcripts.clone() {
        return Ok(Box::new(move |task: &QueueTask| {
            let t = Transcript::from_file(&dir.join(format!("{}.json", task.task_id)))?;
            Ok(Box::new(ScriptedClient::new(t)) as Box<dyn ModelClient>)
        }));
    }
    let config = match &args.model_config {
        Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| p.display().to_string())?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ModelConfig::default(),
    };
    Ok(Box::new(move |_: &QueueTask| Ok(Box::new(HttpChatClient::new(config.clone())) as Box<dyn ModelClient>)))
}

fn executor(args: &PipelineArgs, out: &Path, metrics: Arc<Metrics>) -> Result<ForgeExecutor> {
    std::fs::create_dir_all(&args.state)?;
    let source = match &args.repos_from {
        Some(dir) => RepoSource::LocalDir(dir.clone()),
        None => RepoSource::github(),
    };
    let mut config = LoopConfig::new(args.state.join("work"));
    config.max_iterations = args.max_iterations;
    config.validation.registry = args.registry.clone();
    config.validation.double_run = args.double_run;
    if let Some(s) = args.run_timeout_secs {
        config.validation.limits.wall_clock_timeout = Duration::from_secs(s);
    }
    config.validation.limits.validate().map_err(anyhow::Error::msg)?;
    Ok(ForgeExecutor {
        clients: client_factory(args)?,
        engine: MeteredEngine::new(engine(args)?, metrics.clone()),
        images: ImageCache::open(args.state.join("images.json"))?,
        repos: RepoCache::new(args.state.join("repos"), source),
        config,
        store: TaskStore::new(out)?,
        prune: PrunePolicy::default(),
        metrics,
    })
}

fn shutdown_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    ctrlc::set_handler(move || {
        if f.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("shutting down after the current task; interrupt again to abort");
    })?;
    Ok(flag)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Run { candidates, out, pipeline } => {
            let metrics = Arc::new(Metrics::default());
            let exec = executor(&pipeline, &out, metrics.clone())?;
            let tasks: Vec<QueueTask> = read_candidates(&candidates)?.into_iter().map(QueueTask::new).collect();
            let mut failures = 0;
            for task in &tasks {
                let outcome = exec.execute(task);
                let record = exec.store.load(&task.task_id).ok();
                match record {
                    Some(r) => println!(
                        "{}\t{:?}\titerations={}\t{}",
                        r.task_id,
                        r.final_status,
                        r.iteration_count,
                        r.note.as_deref().unwrap_or("")
                    ),
                    None => {
                        failures += 1;
                        println!("{}\terror\t{outcome:?}", task.task_id);
                    }
                }
            }
            info!(
                tasks = tasks.len(),
                builds = metrics.get("builds_total"),
                cache_hits = metrics.get("cache_hits"),
                "run finished"
            );
            if failures > 0 {
                bail!("{failures} task(s) produced no record");
            }
        }
        Cmd::Enqueue { queue, candidates } => {
            let q = Queue::open(&queue)?;
            let tasks: Vec<QueueTask> = read_candidates(&candidates)?.into_iter().map(QueueTask::new).collect();
            let added = q.enqueue(&tasks)?;
            println!("enqueued {added} of {} tasks ({} already known)", tasks.len(), tasks.len() - added);
        }
        Cmd::Worker {
            id,
            queue,
            out,
            metrics_addr,
            lease_ttl_secs,
            poll_ms,
            reap_interval_secs,
            prune_interval_secs,
            exit_when_drained,
            noop_delay_ms,
            pipeline,
        } => {
            let q = Queue::open(&queue)?;
            let metrics = Arc::new(Metrics::default());
            let config = WorkerConfig {
                lease_ttl: Duration::from_secs(lease_ttl_secs),
                poll_interval: Duration::from_millis(poll_ms),
                prune_interval: Duration::from_secs(prune_interval_secs),
                reap_interval: Duration::from_secs(reap_interval_secs),
                max_tasks: None,
                exit_when_drained,
                metrics_addr,
            };
            let executor: Box<dyn TaskExecutor> = match noop_delay_ms {
                Some(ms) => Box::new(NoopExecutor { delay: Duration::from_millis(ms) }),
                None => Box::new(executor(&pipeline, &out, metrics.clone())?),
            };
            let summary = worker_loop(&q, &id, &config, executor.as_ref(), metrics, shutdown_flag()?)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Cmd::Reap { queue } => {
            let q = Queue::open(&queue)?;
            let reclaimed = q.reap_expired(now_millis())?;
            for id in &reclaimed {
                let state = if q.state_of(id) == Some(QueueState::Parked) { "parked" } else { "pending" };
                println!("{id}\t{state}");
            }
            eprintln!("reclaimed {} task(s)", reclaimed.len());
        }
        Cmd::Status { queue } => {
            let q = Queue::open(&queue)?;
            let status = serde_json::json!({
                "counts": q.counts()?,
                "workers": WorkerStatus::read_all(&queue.join("workers"))?,
            });
            println!("{}", serde_json::to_string_pretty(&status)?);
        }
        Cmd::Curate { rollouts, keep, out, attempts, forbidden, sequential } => {
            let config = CurationConfig {
                attempts_per_task: attempts,
                keep_pass_counts: keep.into_iter().collect::<BTreeSet<_>>(),
                forbidden_action_substrings: forbidden,
                ..Default::default()
            };
            let records = load_rollouts(&rollouts)?;
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let (counts, report) = curate(&records, &config, &out, exec)?;
            let incomplete = counts.values().filter(|c| c.incomplete).count();
            if incomplete > 0 {
                eprintln!("warning: {incomplete} (task, scaffold) group(s) have fewer than {attempts} attempts");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
