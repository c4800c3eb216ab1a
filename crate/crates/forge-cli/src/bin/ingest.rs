//! Pull-request collection and candidate filtering.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use forge_core::ingest::{
    filter_candidates_with, write_candidates, FilterStage, FixtureTransport, GithubCollector, HttpTransport,
    IngestStore, UreqTransport, DEFAULT_API_BASE, DEFAULT_MIN_STARS,
};
use forge_core::par::Exec;

#[derive(Parser)]
#[command(name = "ingest", about = "Collect merged pull requests and filter them into task candidates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fetch merged pull requests of one repository into a line-delimited store.
    Fetch {
        /// Repository as owner/name.
        #[arg(long)]
        repo: String,
        #[arg(long)]
        out: PathBuf,
        /// Pages of 100 pull requests to read.
        #[arg(long, default_value_t = 1)]
        pages: usize,
        #[arg(long, default_value = DEFAULT_API_BASE)]
        api_base: String,
        /// Replay recorded responses instead of calling the API.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Apply the four-stage filter to a store and write candidates.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_STARS)]
        min_stars: u64,
        /// Run on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Fetch { repo, out, pages, api_base, fixture, timeout_secs } => {
            let transport: Box<dyn HttpTransport> = match fixture {
                Some(path) => Box::new(FixtureTransport::from_file(&path).map_err(anyhow::Error::msg)?),
                None => {
                    let token = std::env::var("GITHUB_TOKEN").ok();
                    Box::new(UreqTransport::new(token, Duration::from_secs(timeout_secs)))
                }
            };
            let store = IngestStore::new(&out);
            let collector = GithubCollector::new(transport, api_base).with_store(store.clone());
            let prs = collector.fetch_pull_requests(&repo, pages).with_context(|| format!("fetching {repo}"))?;
            println!("fetched {} merged pull requests into {}", prs.len(), store.file_for(&repo).display());
        }
        Cmd::Filter { input, out, min_stars, sequential } => {
            let records = IngestStore::new(&input).read_all()?;
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let report = filter_candidates_with(&records, min_stars, &FilterStage::ORDER, exec);
            write_candidates(&out, &report.accepted)?;
            println!("{} records, {} accepted", report.input_count, report.accepted.len());
            for (stage, n) in &report.rejected {
                println!("  rejected at {:<20} {n}", stage.name());
            }
        }
    }
    Ok(())
}
