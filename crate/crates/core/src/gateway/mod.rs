//! Uniform access to a completion endpoint with record/replay.
//!
//! Every request is identified by a SHA-256 digest over its model, decoding
//! parameters and prompt. In `Replay` mode responses come only from the
//! cassette; in `Record` mode new responses are persisted before they are
//! returned; `Live` bypasses the cassette.

pub mod cassette;
pub mod http;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, CassetteError};
pub use http::HttpBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointMode {
    Live,
    Record,
    Replay,
}

fn default_concurrency() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key_env: String,
    pub mode: EndpointMode,
    /// Maximum in-flight backend requests.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 256,
            api_key_env: "OPENAI_API_KEY".into(),
            mode: EndpointMode::Replay,
            concurrency: default_concurrency(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, cfg: &LlmEndpointConfig) -> Self {
        Self {
            prompt: prompt.into(),
            model_name: cfg.model_name.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        }
    }
}

/// Lowercase hex SHA-256 of
/// `model \x1f temperature(6 decimals) \x1f max_tokens \x1f prompt`.
pub fn request_digest(req: &GenerationRequest) -> String {
    let canonical = format!(
        "{}\x1f{:.6}\x1f{}\x1f{}",
        req.model_name, req.temperature, req.max_tokens, req.prompt
    );
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
}

/// Something that turns a prompt into a completion.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError>;
}

impl<F> CompletionBackend for F
where
    F: Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        self(req)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("cassette miss for digest {digest}")]
    CassetteMiss { digest: String },
    #[error("transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("authentication error: {0}")]
    Auth(String),
    #[error(transparent)]
    Cassette(#[from] CassetteError),
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self { slots: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().expect("limiter lock poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limiter lock poisoned");
        }
        *slots -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("limiter lock poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    cfg: LlmEndpointConfig,
    cassette: Arc<Cassette>,
    backend: Option<Arc<dyn CompletionBackend>>,
    limiter: Limiter,
    backend_calls: AtomicUsize,
}

impl Gateway {
    /// Gateway over an explicit backend. Replay mode never touches it.
    pub fn new(cfg: LlmEndpointConfig, cassette: Arc<Cassette>, backend: Option<Arc<dyn CompletionBackend>>) -> Self {
        let limiter = Limiter::new(cfg.concurrency);
        Self { cfg, cassette, backend, limiter, backend_calls: AtomicUsize::new(0) }
    }

    /// Gateway over the HTTP backend, reading the key from the configured
    /// environment variable. Replay mode needs no key.
    pub fn from_config(cfg: LlmEndpointConfig, cassette: Arc<Cassette>) -> Result<Self, GatewayError> {
        let backend: Option<Arc<dyn CompletionBackend>> = match cfg.mode {
            EndpointMode::Replay => None,
            EndpointMode::Live | EndpointMode::Record => {
                let key = std::env::var(&cfg.api_key_env)
                    .ok()
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| GatewayError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
                Some(Arc::new(HttpBackend::new(
                    &cfg.base_url,
                    key,
                    Duration::from_secs(cfg.timeout_secs),
                )))
            }
        };
        Ok(Self::new(cfg, cassette, backend))
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    /// Worker count callers should use when fanning out requests.
    pub fn concurrency(&self) -> usize {
        self.cfg.concurrency.max(1)
    }

    /// Number of times the backend was invoked, retries included.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn request(&self, prompt: impl Into<String>) -> GenerationRequest {
        GenerationRequest::new(prompt, &self.cfg)
    }

    /// Completes `prompt` with the configured decoding parameters.
    pub fn generate(&self, prompt: &str) -> Result<String, GatewayError> {
        self.generate_request(&self.request(prompt))
    }

    pub fn generate_request(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        if req.prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        match self.cfg.mode {
            EndpointMode::Replay => {
                let digest = request_digest(req);
                self.cassette.get(&digest).ok_or(GatewayError::CassetteMiss { digest })
            }
            EndpointMode::Record => {
                if let Some(stored) = self.cassette.get(&request_digest(req)) {
                    return Ok(stored);
                }
                let response = self.call_with_retries(req)?;
                Ok(self.cassette.append(CassetteEntry::new(req, response))?)
            }
            EndpointMode::Live => self.call_with_retries(req),
        }
    }

    fn call_with_retries(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| GatewayError::Auth("no backend configured".into()))?;
        let _slot = self.limiter.acquire();
        let mut retries = 0;
        loop {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match backend.complete(req) {
                Ok(text) => return Ok(text),
                Err(BackendError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
                Err(BackendError::Transport(message)) => {
                    if retries >= self.cfg.max_retries {
                        return Err(GatewayError::Transport { retries, message });
                    }
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << retries.min(16));
                    log::warn!("transport error ({message}); retry {} in {delay} ms", retries + 1);
                    std::thread::sleep(Duration::from_millis(delay));
                    retries += 1;
                }
            }
        }
    }
}
