//! Pull-request collection over the GitHub REST API.
//!
//! HTTP goes through [`HttpTransport`] so recorded fixtures can stand in for
//! the live API.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::store::{IngestStore, StoreError};
use super::{LinkedIssue, RawPullRequest};

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
const PER_PAGE: usize = 100;
const ACCEPT_JSON: &str = "application/vnd.github+json";
const ACCEPT_DIFF: &str = "application/vnd.github.v3.diff";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    /// Lower-cased header names.
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError>;
}

/// Live transport. Sends `Authorization: Bearer` when the token is set.
pub struct UreqTransport {
    agent: ureq::Agent,
    token: Option<String>,
}

impl UreqTransport {
    pub fn new(token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, token }
    }

    /// Reads the token from `GITHUB_TOKEN` if present.
    pub fn from_env() -> Self {
        Self::new(std::env::var("GITHUB_TOKEN").ok(), Duration::from_secs(60))
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, accept: &str) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .agent
            .get(url)
            .header("Accept", accept)
            .header("User-Agent", "forge-ingest");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.call().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str().to_ascii_lowercase(),
                    v.to_str().unwrap_or_default().to_string(),
                )
            })
            .collect();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

#[derive(Debug, Deserialize)]
struct RecordedResponse {
    #[serde(default = "ok_status")]
    status: u16,
    #[serde(default)]
    headers: BTreeMap<String, String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    json: Option<Value>,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Deserialize)]
struct RecordedFixture {
    responses: HashMap<String, RecordedResponse>,
}

/// Replays responses recorded in a JSON fixture.
///
/// Fixture shape: `{"responses": {"/repos/o/r?x=1": {"status": 200,
/// "headers": {...}, "json": ... | "body": "..."}}}`, keyed by the request
/// path and query with the API base stripped. Requests with no recorded
/// response fail with a transport error.
pub struct FixtureTransport {
    responses: HashMap<String, HttpResponse>,
    calls: AtomicUsize,
}

impl FixtureTransport {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let fixture: RecordedFixture = serde_json::from_str(text)?;
        let responses = fixture
            .responses
            .into_iter()
            .map(|(k, r)| {
                let body = match (r.body, r.json) {
                    (Some(b), _) => b,
                    (None, Some(j)) => j.to_string(),
                    (None, None) => String::new(),
                };
                let headers = r
                    .headers
                    .into_iter()
                    .map(|(k, v)| (k.to_ascii_lowercase(), v))
                    .collect();
                (
                    k,
                    HttpResponse {
                        status: r.status,
                        headers,
                        body,
                    },
                )
            })
            .collect();
        Ok(Self {
            responses,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl HttpTransport for FixtureTransport {
    fn get(&self, url: &str, _accept: &str) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = match url.find("://") {
            Some(i) => url[i + 3..].find('/').map(|j| &url[i + 3 + j..]).unwrap_or("/"),
            None => url,
        };
        self.responses
            .get(key)
            .cloned()
            .ok_or_else(|| TransportError(format!("no recorded response for {key}")))
    }
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rate limit exhausted, retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("unexpected HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("decode error for {url}: {message}")]
    Decode { url: String, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn closing_refs() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:close[sd]?|fix(?:e[sd])?|resolve[sd]?)\s*:?\s+#(\d+)")
            .expect("static regex")
    })
}

/// Issue numbers referenced with closing keywords, deduplicated, in order.
pub(crate) fn linked_issue_numbers(body: &str) -> Vec<u64> {
    let mut seen = Vec::new();
    for cap in closing_refs().captures_iter(body) {
        if let Ok(n) = cap[1].parse::<u64>() {
            if !seen.contains(&n) {
                seen.push(n);
            }
        }
    }
    seen
}

pub struct GithubCollector {
    transport: Box<dyn HttpTransport>,
    api_base: String,
    store: Option<IngestStore>,
}

impl GithubCollector {
    pub fn new(transport: Box<dyn HttpTransport>, api_base: impl Into<String>) -> Self {
        Self {
            transport,
            api_base: api_base.into().trim_end_matches('/').to_string(),
            store: None,
        }
    }

    /// Persist every fetched record to `store`.
    pub fn with_store(mut self, store: IngestStore) -> Self {
        self.store = Some(store);
        self
    }

    fn get_checked(&self, path: &str, accept: &str) -> Result<HttpResponse, FetchError> {
        let url = format!("{}{}", self.api_base, path);
        let resp = self.transport.get(&url, accept)?;
        match resp.status {
            200..=299 => Ok(resp),
            404 => Err(FetchError::NotFound(path.to_string())),
            403 | 429 if is_rate_limited(&resp) => Err(FetchError::RateLimited {
                retry_after: retry_after(&resp),
            }),
            status => Err(FetchError::Http { status, url }),
        }
    }

    fn get_json(&self, path: &str) -> Result<Value, FetchError> {
        let resp = self.get_checked(path, ACCEPT_JSON)?;
        serde_json::from_str(&resp.body).map_err(|e| FetchError::Decode {
            url: path.to_string(),
            message: e.to_string(),
        })
    }

    /// Collects merged pull requests for `repo_id` from up to `page_limit`
    /// pages of 100, with linked issue bodies and full diff text.
    pub fn fetch_pull_requests(
        &self,
        repo_id: &str,
        page_limit: usize,
    ) -> Result<Vec<RawPullRequest>, FetchError> {
        if page_limit == 0 {
            return Err(FetchError::InvalidArgument("page_limit must be >= 1".into()));
        }
        if repo_id.split('/').count() != 2 || repo_id.split('/').any(str::is_empty) {
            return Err(FetchError::InvalidArgument(format!(
                "repo id {repo_id:?} is not owner/name"
            )));
        }
        let repo = self.get_json(&format!("/repos/{repo_id}"))?;
        let stars = repo["stargazers_count"].as_u64().unwrap_or(0);
        let language = repo["language"].as_str().unwrap_or_default().to_string();

        let mut out = Vec::new();
        for page in 1..=page_limit {
            let listing = self.get_json(&format!(
                "/repos/{repo_id}/pulls?state=closed&per_page={PER_PAGE}&page={page}"
            ))?;
            let items = listing.as_array().cloned().unwrap_or_default();
            for pr in &items {
                if pr["merged_at"].is_null() {
                    continue;
                }
                let Some(number) = pr["number"].as_u64() else {
                    continue;
                };
                let base_commit = pr["base"]["sha"].as_str().unwrap_or_default().to_string();
                let patch = self
                    .get_checked(&format!("/repos/{repo_id}/pulls/{number}"), ACCEPT_DIFF)?
                    .body;
                let mut issues = Vec::new();
                for issue_no in linked_issue_numbers(pr["body"].as_str().unwrap_or_default()) {
                    match self.get_json(&format!("/repos/{repo_id}/issues/{issue_no}")) {
                        Ok(issue) => issues.push(LinkedIssue {
                            issue_id: issue_no,
                            title: issue["title"].as_str().unwrap_or_default().to_string(),
                            body: issue["body"].as_str().unwrap_or_default().to_string(),
                        }),
                        Err(FetchError::NotFound(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                out.push(RawPullRequest {
                    repo_id: repo_id.to_string(),
                    pr_number: number,
                    stars,
                    primary_language: language.clone(),
                    issues,
                    patch,
                    base_commit,
                });
            }
            if items.len() < PER_PAGE {
                break;
            }
        }
        if let Some(store) = &self.store {
            store.append(repo_id, &out)?;
        }
        Ok(out)
    }
}

fn is_rate_limited(resp: &HttpResponse) -> bool {
    resp.status == 429
        || resp.headers.get("x-ratelimit-remaining").map(String::as_str) == Some("0")
        || resp.headers.contains_key("retry-after")
}

fn retry_after(resp: &HttpResponse) -> Duration {
    if let Some(secs) = resp.headers.get("retry-after").and_then(|v| v.parse::<u64>().ok()) {
        return Duration::from_secs(secs);
    }
    if let Some(reset) = resp
        .headers
        .get("x-ratelimit-reset")
        .and_then(|v| v.parse::<u64>().ok())
    {
        let now = crate::fsutil::now_millis() / 1000;
        return Duration::from_secs(reset.saturating_sub(now));
    }
    Duration::from_secs(60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closing_keywords() {
        assert_eq!(
            linked_issue_numbers("Fixes #12, closes #3 and resolves: #12; see #99"),
            [12, 3]
        );
        assert!(linked_issue_numbers("refs #4").is_empty());
    }

    #[test]
    fn rate_limit_carries_wait() {
        let fixture = r#"{"responses": {"/repos/octo/busy": {"status": 403,
            "headers": {"X-RateLimit-Remaining": "0", "Retry-After": "42"}, "body": ""}}}"#;
        let c = GithubCollector::new(Box::new(FixtureTransport::from_json(fixture).unwrap()), "http://x");
        match c.fetch_pull_requests("octo/busy", 1).unwrap_err() {
            FetchError::RateLimited { retry_after } => assert_eq!(retry_after, Duration::from_secs(42)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_pages_rejected() {
        let c = GithubCollector::new(
            Box::new(FixtureTransport::from_json(r#"{"responses":{}}"#).unwrap()),
            "http://x",
        );
        assert!(matches!(
            c.fetch_pull_requests("octo/demo", 0),
            Err(FetchError::InvalidArgument(_))
        ));
    }
}
