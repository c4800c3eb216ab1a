//! Model clients and the per-task audit log.

use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::prompts::TemplateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub token_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("transport error (retryable: {retryable}): {message}")]
    Transport { message: String, retryable: bool },
    #[error("scripted transcript has no reply left for {0}")]
    FixtureExhausted(TemplateId),
    #[error("unexpected model response: {0}")]
    Protocol(String),
    #[error("exchange has no messages")]
    EmptyExchange,
    #[error("audit log write failed: {0}")]
    Audit(String),
}

/// A completion backend. `purpose` names the prompt family so scripted
/// clients can serve replies per template.
pub trait ModelClient: Send + Sync {
    fn complete(&self, purpose: TemplateId, messages: &[Message]) -> Result<Completion, ModelError>;
}

/// One recorded model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExchange {
    pub template_id: TemplateId,
    pub messages: Vec<Message>,
    pub response: String,
    pub token_count: u64,
    pub latency_ms: u64,
}

/// Append-only record of a task's model calls, optionally mirrored to a
/// JSON-lines file.
#[derive(Debug, Default)]
pub struct AuditLog {
    path: Option<PathBuf>,
    entries: Vec<ModelExchange>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[ModelExchange] {
        &self.entries
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, exchange: ModelExchange) -> Result<(), ModelError> {
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&exchange).expect("exchange serializes");
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| ModelError::Audit(e.to_string()))?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ModelError::Audit(e.to_string()))?;
            f.write_all(format!("{line}\n").as_bytes())
                .map_err(|e| ModelError::Audit(e.to_string()))?;
        }
        self.entries.push(exchange);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vec<ModelExchange>, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
            .collect()
    }
}

/// Calls the client and records exactly one exchange on success. Failed
/// calls leave the log untouched.
pub fn complete(
    messages: &[Message],
    client: &dyn ModelClient,
    purpose: TemplateId,
    audit: &mut AuditLog,
) -> Result<String, ModelError> {
    if messages.is_empty() {
        return Err(ModelError::EmptyExchange);
    }
    let started = Instant::now();
    let completion = client.complete(purpose, messages)?;
    audit.append(ModelExchange {
        template_id: purpose,
        messages: messages.to_vec(),
        response: completion.text.clone(),
        token_count: completion.token_count,
        latency_ms: started.elapsed().as_millis() as u64,
    })?;
    Ok(completion.text)
}

/// Calls the model, parses the reply, and on a parse failure re-prompts
/// once with the error appended. Returns `Ok(Err((raw, error)))` when the
/// second reply is also unusable.
pub fn complete_with_repair<T>(
    messages: &[Message],
    client: &dyn ModelClient,
    purpose: TemplateId,
    audit: &mut AuditLog,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Result<T, (String, String)>, ModelError> {
    let first = complete(messages, client, purpose, audit)?;
    let err = match parse(&first) {
        Ok(v) => return Ok(Ok(v)),
        Err(e) => e,
    };
    let mut retry = messages.to_vec();
    retry.push(Message::assistant(first));
    retry.push(Message::user(format!(
        "Your previous reply could not be used:\n{err}\nReply again with the complete, corrected output in the required format."
    )));
    let second = complete(&retry, client, purpose, audit)?;
    Ok(parse(&second).map_err(|e| (second, e)))
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub template: TemplateId,
    pub response: String,
}

/// Transcript fixture: `{"replies": [{"template": "exploration",
/// "response": "..."}, ...]}`. Replies are served first-in first-out per
/// template id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub replies: Vec<ScriptedReply>,
}

impl Transcript {
    pub fn push(&mut self, template: TemplateId, response: impl Into<String>) -> &mut Self {
        self.replies.push(ScriptedReply {
            template,
            response: response.into(),
        });
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Deterministic client that replays a transcript.
pub struct ScriptedClient {
    queues: Mutex<HashMap<TemplateId, VecDeque<String>>>,
    calls: Mutex<Vec<TemplateId>>,
}

impl ScriptedClient {
    pub fn new(transcript: Transcript) -> Self {
        let mut queues: HashMap<TemplateId, VecDeque<String>> = HashMap::new();
        for r in transcript.replies {
            queues.entry(r.template).or_default().push_back(r.response);
        }
        Self {
            queues: Mutex::new(queues),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Replays the responses of a recorded audit log.
    pub fn from_audit(entries: &[ModelExchange]) -> Self {
        let mut t = Transcript::default();
        for e in entries {
            t.push(e.template_id, e.response.clone());
        }
        Self::new(t)
    }

    pub fn calls(&self) -> Vec<TemplateId> {
        self.calls.lock().expect("poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().expect("poisoned").values().map(VecDeque::len).sum()
    }
}

impl ModelClient for ScriptedClient {
    fn complete(&self, purpose: TemplateId, _messages: &[Message]) -> Result<Completion, ModelError> {
        self.calls.lock().expect("poisoned").push(purpose);
        let text = self
            .queues
            .lock()
            .expect("poisoned")
            .get_mut(&purpose)
            .and_then(VecDeque::pop_front)
            .ok_or(ModelError::FixtureExhausted(purpose))?;
        Ok(Completion {
            token_count: approx_tokens(&text),
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_tokens: u32,
    /// Left unset unless configured; providers apply their own default.
    #[serde(default)]
    pub temperature: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.deepseek.com/v1".into(),
            api_key_env: "FORGE_MODEL_API_KEY".into(),
            model: "deepseek-chat".into(),
            timeout_secs: 300,
            max_tokens: 8192,
            temperature: None,
        }
    }
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
pub struct HttpChatClient {
    config: ModelConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: ModelConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok();
        Self {
            config,
            agent,
            api_key,
        }
    }
}

impl ModelClient for HttpChatClient {
    fn complete(&self, _purpose: TemplateId, messages: &[Message]) -> Result<Completion, ModelError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": self.config.max_tokens,
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| ModelError::Transport {
            retryable: true,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ModelError::Transport {
                retryable: true,
                message: e.to_string(),
            })?;
        if status >= 400 {
            return Err(ModelError::Transport {
                retryable: status == 429 || status >= 500,
                message: format!("HTTP {status}: {}", text.chars().take(500).collect::<String>()),
            });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ModelError::Protocol(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ModelError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let token_count = v["usage"]["total_tokens"]
            .as_u64()
            .unwrap_or_else(|| approx_tokens(&content));
        Ok(Completion {
            text: content,
            token_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_passthrough_then_exhausted() {
        let mut t = Transcript::default();
        t.push(TemplateId::Analysis, "  verbatim\nreply ");
        let client = ScriptedClient::new(t);
        let mut audit = AuditLog::in_memory();
        let msgs = [Message::user("hi")];
        let out = complete(&msgs, &client, TemplateId::Analysis, &mut audit).unwrap();
        assert_eq!(out, "  verbatim\nreply ");
        assert_eq!(
            complete(&msgs, &client, TemplateId::Analysis, &mut audit).unwrap_err(),
            ModelError::FixtureExhausted(TemplateId::Analysis)
        );
        assert_eq!(audit.entries().len(), 1);
        assert_eq!(audit.entries()[0].response, "  verbatim\nreply ");
    }

    #[test]
    fn replies_are_keyed_by_template() {
        let mut t = Transcript::default();
        t.push(TemplateId::Analysis, "a1")
            .push(TemplateId::Exploration, "e1")
            .push(TemplateId::Analysis, "a2");
        let client = ScriptedClient::new(t);
        let m = [Message::user("x")];
        assert_eq!(client.complete(TemplateId::Exploration, &m).unwrap().text, "e1");
        assert_eq!(client.complete(TemplateId::Analysis, &m).unwrap().text, "a1");
        assert_eq!(client.complete(TemplateId::Analysis, &m).unwrap().text, "a2");
        assert_eq!(client.remaining(), 0);
    }

    #[test]
    fn empty_exchange_rejected() {
        let client = ScriptedClient::new(Transcript::default());
        let mut audit = AuditLog::in_memory();
        assert_eq!(
            complete(&[], &client, TemplateId::Analysis, &mut audit).unwrap_err(),
            ModelError::EmptyExchange
        );
    }

    #[test]
    fn refused_connection_is_transport_error_and_log_is_intact() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("audit.jsonl");
        let mut audit = AuditLog::to_file(&log_path);
        let mut t = Transcript::default();
        t.push(TemplateId::Analysis, "ok");
        complete(&[Message::user("a")], &ScriptedClient::new(t), TemplateId::Analysis, &mut audit)
            .unwrap();

        // Port 1 on loopback is closed; the connection is refused at once.
        let live = HttpChatClient::new(ModelConfig {
            endpoint: "http://127.0.0.1:1/v1".into(),
            timeout_secs: 5,
            ..ModelConfig::default()
        });
        let err = complete(&[Message::user("b")], &live, TemplateId::Analysis, &mut audit).unwrap_err();
        assert!(matches!(err, ModelError::Transport { retryable: true, .. }), "{err}");
        let reloaded = AuditLog::load(&log_path).unwrap();
        assert_eq!(reloaded.len(), 1);
        assert_eq!(reloaded[0].response, "ok");
    }

    #[test]
    fn repair_reprompts_once() {
        let mut t = Transcript::default();
        t.push(TemplateId::Analysis, "bad").push(TemplateId::Analysis, "good");
        let client = ScriptedClient::new(t);
        let mut audit = AuditLog::in_memory();
        let parse = |s: &str| if s == "good" { Ok(1) } else { Err(format!("not good: {s}")) };
        let out = complete_with_repair(&[Message::user("q")], &client, TemplateId::Analysis, &mut audit, parse)
            .unwrap();
        assert_eq!(out, Ok(1));
        assert_eq!(audit.entries().len(), 2);
        let retry = &audit.entries()[1].messages;
        assert_eq!(retry.len(), 3);
        assert!(retry[2].content.contains("not good: bad"));

        let mut t = Transcript::default();
        t.push(TemplateId::Analysis, "bad").push(TemplateId::Analysis, "worse");
        let client = ScriptedClient::new(t);
        let out = complete_with_repair(&[Message::user("q")], &client, TemplateId::Analysis, &mut audit, parse)
            .unwrap();
        assert_eq!(out, Err(("worse".to_string(), "not good: worse".to_string())));
    }
}
