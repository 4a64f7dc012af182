//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the common `/chat/completions` JSON protocol with
//! bounded exponential backoff. [`ScriptedBackend`] and [`ReplayBackend`]
//! return canned text keyed by request, so whole runs can be reproduced
//! without a model.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rtrc_core::prompt::Message;
use rtrc_core::AgentId;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Key under which a scripted entry answers any request.
pub const WILDCARD_KEY: &str = "*";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable after {attempts} attempt(s): {last}")]
    BackendUnreachable { attempts: u32, last: String },
    #[error("backend rejected request with status {status}: {body}")]
    BackendRejected { status: u16, body: String },
    #[error("no scripted response left for `{0}`")]
    ScriptExhausted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("cannot load script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub agent: AgentId,
    /// `{segment_id}/{round}/{agent}`, used by scripted and replay backends.
    pub request_key: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub run_seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    /// The backend stopped at the output-token limit.
    pub truncated: bool,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            request_timeout: Duration::from_secs(300),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base, 2·base, 4·base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

enum Attempt {
    Done(CompletionResponse),
    Transient(String),
    Fatal(GatewayError),
}

/// OpenAI-compatible chat-completion client.
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    id: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(retry.request_timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            retry,
            id: format!("http:{model}"),
        })
    }

    fn payload(&self, req: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(seed) = req.run_seed {
            body["seed"] = json!(seed);
        }
        body
    }

    async fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let started = Instant::now();
        let mut builder = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => return Attempt::Transient(e.to_string()),
            Err(e) => return Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if status.is_server_error() {
            return Attempt::Transient(format!("status {status}: {text}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::BackendRejected {
                status: status.as_u16(),
                body: text,
            });
        }
        match extract_completion(&text) {
            Ok((raw_text, truncated)) => Attempt::Done(CompletionResponse {
                raw_text,
                latency_ms: started.elapsed().as_millis() as u64,
                backend_id: self.id.clone(),
                truncated,
            }),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

/// Pulls the assistant text out of a completion body. A separate
/// `reasoning_content` field (served by some reasoning models) is folded
/// back into a think block so the parser sees one document.
fn extract_completion(body: &str) -> Result<(String, bool), GatewayError> {
    #[derive(Deserialize)]
    struct Body {
        choices: Vec<Choice>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Msg,
        finish_reason: Option<String>,
    }
    #[derive(Deserialize)]
    struct Msg {
        content: Option<String>,
        reasoning_content: Option<String>,
    }
    let parsed: Body = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let content = choice.message.content.unwrap_or_default();
    let text = match choice.message.reasoning_content {
        Some(r) if !r.is_empty() && !content.to_ascii_lowercase().contains("<think>") => {
            format!("<think>{r}</think>{content}")
        }
        _ => content,
    };
    Ok((text, choice.finish_reason.as_deref() == Some("length")))
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let body = self.payload(req);
        let mut retry = 0;
        loop {
            match self.attempt(&body).await {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) if retry >= self.retry.max_retries => {
                    return Err(GatewayError::BackendUnreachable {
                        attempts: retry + 1,
                        last: msg,
                    })
                }
                Attempt::Transient(msg) => {
                    tracing::warn!(key = %req.request_key, retry, "transient backend failure: {msg}");
                    tokio::time::sleep(self.retry.delay(retry)).await;
                    retry += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub request_key: String,
    pub raw_text: String,
}

type KeyedQueues = HashMap<String, VecDeque<String>>;

/// Canned responses, consumed in file order per request key.
///
/// Entries keyed `*` answer any request whose own queue is empty.
pub struct ScriptedBackend {
    /// Per-key replies, then wildcard replies.
    queues: Mutex<(KeyedQueues, VecDeque<String>)>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut keyed: HashMap<String, VecDeque<String>> = HashMap::new();
        let mut fallback = VecDeque::new();
        for e in entries {
            if e.request_key == WILDCARD_KEY {
                fallback.push_back(e.raw_text);
            } else {
                keyed.entry(e.request_key).or_default().push_back(e.raw_text);
            }
        }
        ScriptedBackend {
            queues: Mutex::new((keyed, fallback)),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Script(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let mut q = self.queues.lock().expect("script lock");
        let (keyed, fallback) = &mut *q;
        let text = keyed
            .get_mut(&req.request_key)
            .and_then(VecDeque::pop_front)
            .or_else(|| fallback.pop_front())
            .ok_or_else(|| GatewayError::ScriptExhausted(req.request_key.clone()))?;
        Ok(CompletionResponse {
            raw_text: text,
            latency_ms: 0,
            backend_id: "scripted".into(),
            truncated: false,
        })
    }
}

/// Answers each request key with the raw text recorded in a previous run.
pub struct ReplayBackend {
    recorded: HashMap<String, CompletionResponse>,
}

impl ReplayBackend {
    pub fn new(recorded: impl IntoIterator<Item = (String, CompletionResponse)>) -> Self {
        ReplayBackend {
            recorded: recorded.into_iter().collect(),
        }
    }
}

#[async_trait]
impl ChatBackend for ReplayBackend {
    fn backend_id(&self) -> &str {
        "replay"
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        self.recorded
            .get(&req.request_key)
            .cloned()
            .ok_or_else(|| GatewayError::ScriptExhausted(req.request_key.clone()))
    }
}
