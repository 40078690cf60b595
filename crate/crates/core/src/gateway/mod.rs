//! Completion backends behind one interface.
//!
//! Three kinds are supported: an OpenAI-style chat endpoint
//! (`remote-http`), an Ollama-style local server (`local-server`), and a
//! directory of canned replies keyed by prompt hash (`scripted-mock`).
//! Transport failures are retried with exponential backoff; a semaphore caps
//! in-flight requests per gateway.

mod http;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{chunk_prompt, PromptError, PromptPackage};

pub use mock::MockBackend;

/// Default sampling temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.15;
/// Attempts per request before giving up on transport errors.
pub const MAX_ATTEMPTS: u32 = 3;

static NETWORK_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests started by this process.
pub fn network_attempts() -> u64 {
    NETWORK_ATTEMPTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteHttp,
    LocalServer,
    ScriptedMock,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output_tokens() -> u32 {
    8192
}
fn default_timeout_s() -> u64 {
    300
}
fn default_in_flight() -> usize {
    2
}
fn default_retry_base_ms() -> u64 {
    1000
}

/// The `llm:` block of `config.yml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// URL for HTTP kinds; fixture directory for the mock.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
    #[serde(default = "default_in_flight")]
    pub in_flight_limit: usize,
    /// Prompts longer than this many characters are sent in parts.
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl BackendConfig {
    pub fn mock(fixture_dir: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::ScriptedMock,
            model: "scripted-mock".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: default_max_output_tokens(),
            endpoint: Some(fixture_dir.into()),
            auth_env: None,
            timeout_s: default_timeout_s(),
            in_flight_limit: default_in_flight(),
            max_prompt_chars: None,
            retry_base_ms: default_retry_base_ms(),
        }
    }

    /// The model name, or the backend kind when no model is set.
    pub fn label(&self) -> String {
        if !self.model.is_empty() {
            return self.model.clone();
        }
        match self.kind {
            BackendKind::RemoteHttp => "remote-http",
            BackendKind::LocalServer => "local-server",
            BackendKind::ScriptedMock => "scripted-mock",
        }
        .to_string()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad(format!("temperature {} is outside [0, 1]", self.temperature));
        }
        if self.endpoint.as_deref().is_none_or(str::is_empty) {
            return bad("endpoint is required".into());
        }
        if self.in_flight_limit == 0 {
            return bad("in_flight_limit must be at least 1".into());
        }
        if self.kind == BackendKind::RemoteHttp && self.auth_env.is_none() {
            return bad("remote-http needs auth_env".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid llm configuration: {0}")]
    InvalidConfig(String),
    #[error("credential variable `{0}` is unset or empty")]
    AuthMissing(String),
    #[error("gave up after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: String },
    #[error("backend refused the request with status {status}: {body_tail}")]
    BackendRefused { status: u16, body_tail: String },
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("no scripted reply for prompt hash {0} and no default.txt")]
    NoScriptedReply(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Minimal chat-style request handed to a backend adapter.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Outcome of one send attempt.
#[derive(Debug)]
pub enum SendError {
    /// Worth retrying (connection failure, timeout, 429, 5xx).
    Transport(String),
    /// Final answer from the backend.
    Fatal(GatewayError),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, req: &ChatRequest) -> Result<ModelResponse, SendError>;
}

/// Anything that turns a prompt package into a model reply.
pub trait Completer: Send + Sync {
    fn complete(&self, pkg: &PromptPackage) -> Result<ModelResponse, GatewayError>;
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    cfg: BackendConfig,
    backend: Box<dyn Backend>,
    slots: Semaphore,
}

impl Gateway {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.clone().unwrap_or_default();
        let backend: Box<dyn Backend> = match cfg.kind {
            BackendKind::ScriptedMock => Box::new(MockBackend::new(endpoint)),
            BackendKind::RemoteHttp => Box::new(http::OpenAiChat::new(endpoint, cfg.auth_env.clone(), cfg.timeout_s)),
            BackendKind::LocalServer => Box::new(http::OllamaChat::new(endpoint, cfg.auth_env.clone(), cfg.timeout_s)),
        };
        Ok(Self::with_backend(cfg, backend))
    }

    /// Gateway over a caller-supplied backend; `cfg.kind` is ignored.
    pub fn with_backend(cfg: BackendConfig, backend: Box<dyn Backend>) -> Self {
        let slots = Semaphore::new(cfg.in_flight_limit.max(1));
        Gateway { cfg, backend, slots }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn check_auth(&self) -> Result<(), GatewayError> {
        if let Some(var) = &self.cfg.auth_env {
            if std::env::var(var).map_or(true, |v| v.is_empty()) {
                return Err(GatewayError::AuthMissing(var.clone()));
            }
        }
        Ok(())
    }

    fn send_with_retry(&self, system: &str, user: &str) -> Result<ModelResponse, GatewayError> {
        if self.cfg.kind != BackendKind::ScriptedMock {
            self.check_auth()?;
        }
        let req = ChatRequest {
            model: self.cfg.model.clone(),
            system: system.to_string(),
            user: user.to_string(),
            temperature: self.cfg.temperature,
            max_output_tokens: self.cfg.max_output_tokens,
        };
        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let started = Instant::now();
            match self.backend.send(&req) {
                Ok(mut resp) => {
                    resp.latency_ms = started.elapsed().as_millis() as u64;
                    resp.backend_id = self.backend.id();
                    return Ok(resp);
                }
                Err(SendError::Fatal(e)) => return Err(e),
                Err(SendError::Transport(msg)) => {
                    log::warn!("attempt {attempt}/{MAX_ATTEMPTS} to {} failed: {msg}", self.backend.id());
                    last = msg;
                    if attempt < MAX_ATTEMPTS {
                        thread::sleep(Duration::from_millis(self.cfg.retry_base_ms << (attempt - 1)));
                    }
                }
            }
        }
        Err(GatewayError::TransportExhausted { attempts: MAX_ATTEMPTS, last })
    }

    /// Sends the chunks of one logical prompt in order and returns the reply
    /// to the last one, with token counts and latency summed over all calls.
    pub fn complete_chunked(&self, chunks: &[PromptPackage]) -> Result<ModelResponse, GatewayError> {
        let Some(first) = chunks.first() else {
            return Err(GatewayError::InvalidConfig("no prompt chunks to send".into()));
        };
        let system = first.guardrails.join("\n");
        if chunks.len() == 1 {
            return self.send_with_retry(&system, &first.prompt_text);
        }
        let n = chunks.len();
        let mut total = ModelResponse::default();
        for (i, chunk) in chunks.iter().enumerate() {
            let user = format!("part {}/{n}; reply only to the final part\n{}", i + 1, chunk.prompt_text);
            let resp = self.send_with_retry(&system, &user)?;
            total.input_tokens += resp.input_tokens;
            total.output_tokens += resp.output_tokens;
            total.latency_ms += resp.latency_ms;
            total.text = resp.text;
            total.backend_id = resp.backend_id;
        }
        Ok(total)
    }
}

impl Completer for Gateway {
    fn complete(&self, pkg: &PromptPackage) -> Result<ModelResponse, GatewayError> {
        match self.cfg.max_prompt_chars {
            Some(limit) => self.complete_chunked(&chunk_prompt(pkg, limit)?),
            None => self.complete_chunked(std::slice::from_ref(pkg)),
        }
    }
}
