//! Chat-completion and embedding access over an OpenAI-compatible HTTP API,
//! or an offline stub.
//!
//! Transient failures (HTTP 429, 5xx, connection errors) are retried with
//! jittered exponential backoff; authentication failures and timeouts are
//! returned immediately with their own error variants. In-flight requests
//! are capped at `parallelism`.

mod ledger;
pub mod stub;
pub mod transport;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{CallKind, CallLedger, CounterSnapshot, LedgerSummary};
pub use stub::{GradeOracle, HashResponder, Responder, StubBackend};
pub use transport::{HttpRequest, HttpResponse, ReqwestTransport, Transport, TransportError};

pub const DEFAULT_API_KEY_ENV: &str = "QBD_LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Protocol(String),
    #[error("refusing to embed empty text")]
    EmptyInput,
    #[error("embedding dimension {got} differs from the session's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no stub response for prompt {prompt_sha256}")]
    StubMiss { prompt_sha256: String },
    #[error("stub fixture error: {0}")]
    Fixture(String),
    #[error("stub backend: {0}")]
    Stub(String),
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub request_timeout_secs: u64,
    pub backoff_base_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-3-large".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.0,
            max_retries: 3,
            parallelism: 4,
            request_timeout_secs: 120,
            backoff_base_ms: 500,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.parallelism == 0 {
            return Err(GatewayError::Config("parallelism must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

/// Number of backend calls a reranking method needs for `n` candidates.
pub fn call_budget(pairwise: bool, n_candidates: usize) -> u64 {
    let n = n_candidates as u64;
    if pairwise {
        n * n.saturating_sub(1)
    } else {
        n
    }
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct PermitGuard<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n), freed: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        PermitGuard(self)
    }
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

enum Mode {
    Http { api_key: Option<String> },
    Stub(StubBackend),
}

enum Attempt {
    Transient(String),
    Fatal(GatewayError),
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    mode: Mode,
    ledger: CallLedger,
    permits: Permits,
    embed_dimension: OnceLock<usize>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("stub", &matches!(self.mode, Mode::Stub(_)))
            .finish()
    }
}

impl Gateway {
    /// OpenAI-compatible HTTP backend. The API key is read from the
    /// configured environment variable; without one, no auth header is sent.
    pub fn http(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport = ReqwestTransport::new().map_err(|e| GatewayError::Config(e.to_string()))?;
        Self::with_transport(config, Arc::new(transport))
    }

    pub fn with_transport(config: GatewayConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self::build(config, transport, Mode::Http { api_key }))
    }

    pub fn stub(config: GatewayConfig, stub: StubBackend) -> Result<Self, GatewayError> {
        Self::stub_with_transport(config, stub, Arc::new(NoNetwork))
    }

    /// Stub mode with an explicit transport, which is never used; lets
    /// tests prove that no request reaches the network.
    pub fn stub_with_transport(
        config: GatewayConfig,
        stub: StubBackend,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self::build(config, transport, Mode::Stub(stub)))
    }

    fn build(config: GatewayConfig, transport: Arc<dyn Transport>, mode: Mode) -> Self {
        let permits = Permits::new(config.parallelism);
        Self {
            config,
            transport,
            mode,
            ledger: CallLedger::default(),
            permits,
            embed_dimension: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn parallelism(&self) -> usize {
        self.config.parallelism
    }

    pub fn is_stub(&self) -> bool {
        matches!(self.mode, Mode::Stub(_))
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    /// Sends `prompt` as a single user message and returns the reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let _permit = self.permits.acquire();
        self.ledger.record_request(CallKind::Chat);
        let result = match &self.mode {
            Mode::Stub(stub) => stub.complete(prompt),
            Mode::Http { api_key } => self.with_retries(CallKind::Chat, || {
                let body = serde_json::json!({
                    "model": self.config.model,
                    "temperature": self.config.temperature,
                    "messages": [{"role": "user", "content": prompt}],
                });
                let resp = self.post("chat/completions", api_key, body)?;
                parse_chat(&resp)
                    .map(|(text, usage)| {
                        if let Some((p, c)) = usage {
                            self.ledger.record_tokens(CallKind::Chat, p, c);
                        }
                        text
                    })
                    .map_err(Attempt::Fatal)
            }),
        };
        if result.is_err() {
            self.ledger.record_failure(CallKind::Chat);
        }
        result
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let _permit = self.permits.acquire();
        self.ledger.record_request(CallKind::Embed);
        let result = match &self.mode {
            Mode::Stub(stub) => Ok(stub.embed(text)),
            Mode::Http { api_key } => self.with_retries(CallKind::Embed, || {
                let body = serde_json::json!({"model": self.config.embedding_model, "input": text});
                let resp = self.post("embeddings", api_key, body)?;
                parse_embedding(&resp)
                    .map(|(v, tokens)| {
                        if let Some(t) = tokens {
                            self.ledger.record_tokens(CallKind::Embed, t, 0);
                        }
                        v
                    })
                    .map_err(Attempt::Fatal)
            }),
        }
        .and_then(|v| {
            let expected = *self.embed_dimension.get_or_init(|| v.len());
            if v.len() != expected {
                return Err(GatewayError::DimensionMismatch { expected, got: v.len() });
            }
            Ok(v)
        });
        if result.is_err() {
            self.ledger.record_failure(CallKind::Embed);
        }
        result
    }

    fn post(&self, path: &str, api_key: &Option<String>, body: serde_json::Value) -> Result<HttpResponse, Attempt> {
        let request = HttpRequest {
            url: format!("{}/{}", self.config.base_url.trim_end_matches('/'), path),
            bearer: api_key.clone(),
            body,
            timeout: self.config.timeout(),
        };
        let resp = self.transport.post_json(&request).map_err(|e| match e {
            TransportError::Timeout => Attempt::Fatal(GatewayError::Timeout(request.timeout)),
            TransportError::Connection(msg) => Attempt::Transient(msg),
        })?;
        match resp.status {
            200..=299 => Ok(resp),
            401 | 403 => Err(Attempt::Fatal(GatewayError::Auth { status: resp.status })),
            429 | 500..=599 => Err(Attempt::Transient(format!("HTTP {}", resp.status))),
            status => Err(Attempt::Fatal(GatewayError::Http { status, body: resp.body })),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter: f64 = rand::rng().random_range(0.5..1.0);
        Duration::from_secs_f64(base * jitter / 1000.0)
    }

    fn with_retries<T>(&self, kind: CallKind, mut op: impl FnMut() -> Result<T, Attempt>) -> Result<T, GatewayError> {
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => {
                    attempt += 1;
                    if attempt >= attempts {
                        return Err(GatewayError::RetriesExhausted { attempts, last: msg });
                    }
                    log::warn!("transient backend failure ({msg}), retry {attempt}/{}", self.config.max_retries);
                    self.ledger.record_retry(kind);
                    std::thread::sleep(self.backoff(attempt - 1));
                }
            }
        }
    }
}

struct NoNetwork;

impl Transport for NoNetwork {
    fn post_json(&self, _request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        Err(TransportError::Connection("network disabled".into()))
    }
}

type Usage = Option<(u64, u64)>;

fn parse_chat(resp: &HttpResponse) -> Result<(String, Usage), GatewayError> {
    let v: serde_json::Value =
        serde_json::from_str(&resp.body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))?
        .to_string();
    let usage = match (v["usage"]["prompt_tokens"].as_u64(), v["usage"]["completion_tokens"].as_u64()) {
        (Some(p), Some(c)) => Some((p, c)),
        _ => None,
    };
    Ok((text, usage))
}

fn parse_embedding(resp: &HttpResponse) -> Result<(Vec<f64>, Option<u64>), GatewayError> {
    let v: serde_json::Value =
        serde_json::from_str(&resp.body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let arr = v["data"][0]["embedding"]
        .as_array()
        .ok_or_else(|| GatewayError::Protocol("missing data[0].embedding".into()))?;
    let vec = arr
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| GatewayError::Protocol("non-numeric embedding value".into())))
        .collect::<Result<Vec<_>, _>>()?;
    if vec.is_empty() {
        return Err(GatewayError::Protocol("empty embedding".into()));
    }
    Ok((vec, v["usage"]["prompt_tokens"].as_u64()))
}

/// Runs `f` over `items` on up to `parallelism` threads, returning results
/// in input order regardless of completion order.
pub fn fan_out<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every slot is filled"))
        .collect()
}
