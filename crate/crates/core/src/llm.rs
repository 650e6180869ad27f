//! Text-generation gateway.
//!
//! All agent traffic goes through [`Gateway::complete`], which enforces the
//! request/spend budget before anything leaves the process, retries transient
//! failures with exponential backoff, bounds in-flight requests per backend,
//! and appends one transcript line per attempt.
//!
//! [`ScriptedBackend`] answers from a fixture keyed by `(role_id, sha256(prompt))`
//! and makes every agent stage a pure function of its inputs and the fixture.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::model::Digest256;

pub fn prompt_digest(prompt: &str) -> String {
    Digest256::of(prompt.as_bytes()).to_hex()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role_id: String,
    pub backend_id: String,
    pub prompt: String,
    /// Upper bound on response length, in characters.
    pub max_output: usize,
    pub attempt: u32,
}

impl AgentRequest {
    pub fn new(role_id: &str, backend_id: &str, prompt: String) -> Self {
        AgentRequest {
            role_id: role_id.to_string(),
            backend_id: backend_id.to_string(),
            prompt,
            max_output: 8_000,
            attempt: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
    #[error("no scripted response for role {role_id:?} and prompt digest {prompt_digest}")]
    Unscripted { role_id: String, prompt_digest: String },
}

pub trait Backend: Send + Sync {
    /// Short tag for reports, e.g. `"scripted"` or `"openai"`.
    fn kind(&self) -> &'static str;
    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("backend {backend:?} failed after {attempts} attempt(s): {message}")]
    BackendFailure {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("no scripted response for role {role_id:?} and prompt digest {prompt_digest}")]
    UnscriptedRequest { role_id: String, prompt_digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_requests: u64,
    /// Cap on the total prompt characters sent, if any.
    pub max_prompt_chars: Option<u64>,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_requests: 10_000,
            max_prompt_chars: None,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp: DateTime<Utc>,
    pub role_id: String,
    pub backend_id: String,
    pub attempt: u32,
    pub prompt_digest: String,
    pub prompt: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

/// JSONL transcript sink. Entries are also kept in memory when requested.
pub struct Transcript {
    file: Option<BufWriter<File>>,
    keep: bool,
    entries: Vec<TranscriptEntry>,
    count: u64,
}

impl Transcript {
    pub fn memory() -> Self {
        Transcript {
            file: None,
            keep: true,
            entries: Vec::new(),
            count: 0,
        }
    }

    /// Appends to `path`, creating it if needed.
    pub fn file(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript {
            file: Some(BufWriter::new(f)),
            keep: false,
            entries: Vec::new(),
            count: 0,
        })
    }

    fn append(&mut self, entry: TranscriptEntry) {
        self.count += 1;
        if let Some(f) = self.file.as_mut() {
            let line = serde_json::to_string(&entry).expect("transcript entries serialize");
            // transcript write failures must not fail the request
            let _ = writeln!(f, "{line}").and_then(|_| f.flush());
        }
        if self.keep {
            self.entries.push(entry);
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Slot {
    backend: Arc<dyn Backend>,
    limiter: Semaphore,
}

#[derive(Default)]
struct Spend {
    requests: u64,
    prompt_chars: u64,
}

/// Thread-safe facade over the registered backends.
pub struct Gateway {
    slots: BTreeMap<String, Slot>,
    config: GatewayConfig,
    spend: Mutex<Spend>,
    transcript: Mutex<Transcript>,
}

impl Gateway {
    pub fn new(config: GatewayConfig, transcript: Transcript) -> Self {
        Gateway {
            slots: BTreeMap::new(),
            config,
            spend: Mutex::new(Spend::default()),
            transcript: Mutex::new(transcript),
        }
    }

    pub fn register(&mut self, id: &str, backend: Arc<dyn Backend>) {
        let limiter = Semaphore::new(self.config.max_in_flight);
        self.slots.insert(id.to_string(), Slot { backend, limiter });
    }

    pub fn with_backend(mut self, id: &str, backend: Arc<dyn Backend>) -> Self {
        self.register(id, backend);
        self
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.slots.contains_key(id)
    }

    /// `(backend id, kind)` for every registered backend.
    pub fn backend_kinds(&self) -> Vec<(String, &'static str)> {
        self.slots.iter().map(|(id, s)| (id.clone(), s.backend.kind())).collect()
    }

    pub fn requests_used(&self) -> u64 {
        self.spend.lock().unwrap().requests
    }

    pub fn transcript_len(&self) -> u64 {
        self.transcript.lock().unwrap().count
    }

    /// In-memory transcript entries (empty for file-only transcripts).
    pub fn transcript_entries(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().entries.clone()
    }

    fn reserve(&self, prompt_chars: u64) -> Result<(), GatewayError> {
        let mut spend = self.spend.lock().unwrap();
        if spend.requests + 1 > self.config.max_requests {
            return Err(GatewayError::BudgetExceeded(format!(
                "request cap of {} reached",
                self.config.max_requests
            )));
        }
        if let Some(cap) = self.config.max_prompt_chars {
            if spend.prompt_chars + prompt_chars > cap {
                return Err(GatewayError::BudgetExceeded(format!("prompt character cap of {cap} reached")));
            }
        }
        spend.requests += 1;
        spend.prompt_chars += prompt_chars;
        Ok(())
    }

    pub fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, GatewayError> {
        if request.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let slot = self
            .slots
            .get(&request.backend_id)
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;
        let digest = prompt_digest(&request.prompt);
        let max_attempts = self.config.max_attempts.max(1);
        let mut last_error = String::new();

        for attempt in 1..=max_attempts {
            self.reserve(request.prompt.chars().count() as u64)?;
            let mut req = request.clone();
            req.attempt = attempt;
            let started = Instant::now();
            let result = {
                let _permit = slot.limiter.acquire();
                slot.backend.complete(&req)
            };
            let latency_ms = started.elapsed().as_millis() as u64;
            let (outcome, response, error) = match &result {
                Ok(r) => ("ok", Some(r.text.clone()), None),
                Err(BackendError::Transient(m)) => ("transient", None, Some(m.clone())),
                Err(BackendError::Fatal(m)) => ("fatal", None, Some(m.clone())),
                Err(e @ BackendError::Unscripted { .. }) => ("unscripted", None, Some(e.to_string())),
            };
            self.transcript.lock().unwrap().append(TranscriptEntry {
                timestamp: Utc::now(),
                role_id: req.role_id.clone(),
                backend_id: req.backend_id.clone(),
                attempt,
                prompt_digest: digest.clone(),
                prompt: req.prompt.clone(),
                outcome: outcome.to_string(),
                response,
                error,
                latency_ms,
            });

            match result {
                Ok(reply) => {
                    return Ok(AgentResponse {
                        text: reply.text,
                        backend_id: req.backend_id,
                        latency_ms,
                        usage: reply.usage,
                    })
                }
                Err(BackendError::Transient(m)) => {
                    debug!(backend = %req.backend_id, attempt, "transient failure: {m}");
                    last_error = m;
                    if attempt < max_attempts {
                        std::thread::sleep(self.config.base_delay * 2u32.saturating_pow(attempt - 1));
                    }
                }
                Err(BackendError::Fatal(m)) => {
                    return Err(GatewayError::BackendFailure {
                        backend: req.backend_id,
                        attempts: attempt,
                        message: m,
                    })
                }
                Err(BackendError::Unscripted { role_id, prompt_digest }) => {
                    return Err(GatewayError::UnscriptedRequest { role_id, prompt_digest })
                }
            }
        }
        Err(GatewayError::BackendFailure {
            backend: request.backend_id.clone(),
            attempts: max_attempts,
            message: last_error,
        })
    }
}

/// One fixture line: `{role_id, prompt_digest, response}`. `prompt_digest`
/// may be `"*"` to match any prompt for the role. Setting `fault` to
/// `"transient"` or `"fatal"` makes that step fail instead of answering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role_id: String,
    pub prompt_digest: String,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

pub const ANY_PROMPT: &str = "*";

/// Deterministic backend answering from a fixture.
///
/// Several entries with the same key form a queue consumed in fixture order;
/// the last one keeps answering once the queue is drained. Exact digests take
/// precedence over `"*"` entries.
pub struct ScriptedBackend {
    queues: Mutex<HashMap<(String, String), VecDeque<ScriptEntry>>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut queues: HashMap<(String, String), VecDeque<ScriptEntry>> = HashMap::new();
        for e in entries {
            queues.entry((e.role_id.clone(), e.prompt_digest.clone())).or_default().push_back(e);
        }
        ScriptedBackend {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        Ok(Self::new(crate::jsonl::read::<ScriptEntry>(path)?))
    }
}

impl Backend for ScriptedBackend {
    fn kind(&self) -> &'static str {
        "scripted"
    }

    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, BackendError> {
        let digest = prompt_digest(&request.prompt);
        let mut queues = self.queues.lock().unwrap();
        let exact = (request.role_id.clone(), digest.clone());
        let key = if queues.contains_key(&exact) {
            exact
        } else {
            (request.role_id.clone(), ANY_PROMPT.to_string())
        };
        let Some(queue) = queues.get_mut(&key) else {
            return Err(BackendError::Unscripted {
                role_id: request.role_id.clone(),
                prompt_digest: digest,
            });
        };
        let step = if queue.len() > 1 {
            queue.pop_front().unwrap()
        } else {
            queue.front().cloned().unwrap()
        };
        match step.fault.as_deref() {
            Some("transient") => Err(BackendError::Transient("scripted transient fault".into())),
            Some(other) => Err(BackendError::Fatal(format!("scripted {other} fault"))),
            None => Ok(BackendReply {
                text: step.response,
                usage: None,
            }),
        }
    }
}

/// Collects fixture entries for a [`ScriptedBackend`] from prompt texts.
#[derive(Debug, Default, Clone)]
pub struct ScriptBuilder {
    pub entries: Vec<ScriptEntry>,
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond(&mut self, role_id: &str, prompt: &str, response: impl Into<String>) -> &mut Self {
        self.entries.push(ScriptEntry {
            role_id: role_id.to_string(),
            prompt_digest: prompt_digest(prompt),
            response: response.into(),
            fault: None,
        });
        self
    }

    pub fn respond_any(&mut self, role_id: &str, response: impl Into<String>) -> &mut Self {
        self.entries.push(ScriptEntry {
            role_id: role_id.to_string(),
            prompt_digest: ANY_PROMPT.to_string(),
            response: response.into(),
            fault: None,
        });
        self
    }

    pub fn fault(&mut self, role_id: &str, prompt: &str, fault: &str) -> &mut Self {
        self.entries.push(ScriptEntry {
            role_id: role_id.to_string(),
            prompt_digest: prompt_digest(prompt),
            response: String::new(),
            fault: Some(fault.to_string()),
        });
        self
    }

    pub fn build(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.entries.clone())
    }
}

/// An OpenAI-compatible `/chat/completions` backend.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    model: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: usize,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, model: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpBackend {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
        }
    }

    /// Reads `LLM_BASE_URL_<NAME>` / `LLM_API_KEY_<NAME>`, falling back to the
    /// unsuffixed variables.
    pub fn from_env(name: &str, model: &str, base_url: Option<&str>) -> Result<Self, String> {
        let suffix = name.to_ascii_uppercase().replace(|c: char| !c.is_ascii_alphanumeric(), "_");
        let var = |base: &str| {
            std::env::var(format!("{base}_{suffix}"))
                .or_else(|_| std::env::var(base))
                .ok()
        };
        let url = base_url
            .map(str::to_string)
            .or_else(|| var("LLM_BASE_URL"))
            .ok_or_else(|| format!("no base URL for backend {name:?} (set LLM_BASE_URL_{suffix})"))?;
        Ok(Self::new(&url, var("LLM_API_KEY"), model, Duration::from_secs(120)))
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> &'static str {
        "openai"
    }

    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            // roughly four characters per token
            max_tokens: request.max_output.div_ceil(4).max(1),
        };
        let mut call = self.agent.post(format!("{}/chat/completions", self.base_url));
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(BackendError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => return Err(BackendError::Fatal(format!("HTTP {code}"))),
            Err(e) => return Err(BackendError::Transient(e.to_string())),
        };
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Fatal(format!("malformed completion payload: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal("completion has no choices".into()))?;
        Ok(BackendReply {
            text,
            usage: parsed.usage,
        })
    }
}

/// Backend definitions as they appear in the run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Scripted {
        name: String,
        script: PathBuf,
    },
    Openai {
        name: String,
        model: String,
        #[serde(default)]
        base_url: Option<String>,
    },
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Scripted { name, .. } | BackendSpec::Openai { name, .. } => name,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, String> {
        match self {
            BackendSpec::Scripted { script, .. } => ScriptedBackend::from_path(script)
                .map(|b| Arc::new(b) as Arc<dyn Backend>)
                .map_err(|e| e.to_string()),
            BackendSpec::Openai { name, model, base_url } => {
                HttpBackend::from_env(name, model, base_url.as_deref()).map(|b| Arc::new(b) as Arc<dyn Backend>)
            }
        }
    }
}
