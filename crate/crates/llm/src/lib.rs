//! Chat-completion client used by the LLM-backed agents.
//!
//! Calls go through a [`Transport`] (normally HTTP), are retried on transient
//! failures, limited to a fixed number in flight, and logged to an in-memory
//! ledger. A [`Cassette`] can record responses to a JSONL file and replay them
//! later without touching the network.

mod cassette;
mod request;
mod transport;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{parse_cassette_arg, Cassette, CassetteEntry, CassetteError, CassetteMode, RequestSummary};
pub use request::{ChatMessage, ChatRequest, ChatResponse, RequestTag, Role};
pub use transport::{
    parse_completion, HttpTransport, NoTransport, Transport, TransportError, API_KEY_ENV, BASE_URL_ENV,
    DEFAULT_BASE_URL,
};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{tag}: request timed out after {attempts} attempt(s)")]
    Timeout { tag: RequestTag, attempts: u32 },
    #[error("{tag}: provider error after {attempts} attempt(s): {message}")]
    Provider { tag: RequestTag, attempts: u32, message: String },
    #[error("{tag}: cassette miss for request {hash}")]
    CassetteMiss { tag: RequestTag, hash: String },
    #[error("{tag}: invalid request: {reason}")]
    InvalidRequest { tag: RequestTag, reason: String },
    #[error("{tag}: {source}")]
    Cassette { tag: RequestTag, source: CassetteError },
}

impl LlmError {
    pub fn tag(&self) -> &RequestTag {
        match self {
            LlmError::Timeout { tag, .. }
            | LlmError::Provider { tag, .. }
            | LlmError::CassetteMiss { tag, .. }
            | LlmError::InvalidRequest { tag, .. }
            | LlmError::Cassette { tag, .. } => tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_concurrency: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            max_concurrency: 8,
        }
    }
}

impl ClientConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallSource {
    Network,
    Cassette,
}

/// One chat call as seen by the client. Times are microseconds since the
/// client was created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub tag: RequestTag,
    pub hash: String,
    pub source: CallSource,
    pub attempts: u32,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub started_us: u64,
    pub finished_us: u64,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Counting semaphore for in-flight network calls.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmClient {
    config: ClientConfig,
    transport: Arc<dyn Transport>,
    mode: CassetteMode,
    cassette: Option<Mutex<Cassette>>,
    slots: Slots,
    ledger: Mutex<Vec<LedgerEntry>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    epoch: Instant,
}

impl LlmClient {
    /// A client that always calls the transport.
    pub fn new(config: ClientConfig, transport: Arc<dyn Transport>) -> Self {
        Self::build(config, transport, CassetteMode::Passthrough, None)
    }

    pub fn with_cassette(config: ClientConfig, transport: Arc<dyn Transport>, cassette: Cassette) -> Self {
        let mode = cassette.mode();
        Self::build(config, transport, mode, Some(cassette))
    }

    /// Replay-only client; never touches the network.
    pub fn replay(config: ClientConfig, cassette: Cassette) -> Self {
        Self::build(config, Arc::new(NoTransport), CassetteMode::Replay, Some(cassette))
    }

    fn build(config: ClientConfig, transport: Arc<dyn Transport>, mode: CassetteMode, cassette: Option<Cassette>) -> Self {
        LlmClient {
            slots: Slots::new(config.max_concurrency),
            config,
            transport,
            mode,
            cassette: cassette.map(Mutex::new),
            ledger: Mutex::new(Vec::new()),
            inflight: Mutex::new(HashMap::new()),
            epoch: Instant::now(),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    /// A request with this client's model and sampling settings.
    pub fn request(&self, messages: Vec<ChatMessage>, tag: RequestTag) -> ChatRequest {
        ChatRequest {
            messages,
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            tag,
        }
    }

    /// Append-only record of every call made through this client.
    pub fn call_ledger(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().clone()
    }

    pub fn network_calls(&self) -> usize {
        self.ledger.lock().iter().filter(|e| e.source == CallSource::Network).count()
    }

    /// Sorts the cassette file in place. No-op without a recording cassette.
    pub fn finish_recording(&self) -> Result<(), CassetteError> {
        match (&self.cassette, self.mode) {
            (Some(c), CassetteMode::Record) => c.lock().rewrite_sorted(),
            _ => Ok(()),
        }
    }

    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    fn log(&self, mut entry: LedgerEntry) {
        let mut ledger = self.ledger.lock();
        entry.seq = ledger.len() as u64;
        ledger.push(entry);
    }

    fn cassette_hit(&self, req: &ChatRequest, hash: &str) -> Option<ChatResponse> {
        let cassette = self.cassette.as_ref()?.lock();
        let entry = cassette.get(hash)?;
        let now = self.now_us();
        self.log(LedgerEntry {
            seq: 0,
            tag: req.tag.clone(),
            hash: hash.to_string(),
            source: CallSource::Cassette,
            attempts: 0,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            started_us: now,
            finished_us: now,
            latency_ms: entry.latency_ms,
            error: None,
        });
        Some(entry.to_response())
    }

    /// Sends one chat request and returns the assistant text.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate().map_err(|reason| LlmError::InvalidRequest { tag: req.tag.clone(), reason })?;
        let hash = req.canonical_hash();
        match self.mode {
            CassetteMode::Replay => self
                .cassette_hit(req, &hash)
                .ok_or_else(|| LlmError::CassetteMiss { tag: req.tag.clone(), hash }),
            CassetteMode::Passthrough => self.call_network(req, &hash),
            CassetteMode::Record => {
                // Identical concurrent requests wait for the first to land.
                let gate = self.inflight.lock().entry(hash.clone()).or_default().clone();
                let _held = gate.lock();
                if let Some(hit) = self.cassette_hit(req, &hash) {
                    return Ok(hit);
                }
                let (resp, latency_ms) = self.call_network_timed(req, &hash)?;
                if let Some(cassette) = &self.cassette {
                    cassette
                        .lock()
                        .insert(CassetteEntry {
                            hash: hash.clone(),
                            request: RequestSummary::of(req),
                            response: resp.text.clone(),
                            latency_ms,
                            prompt_tokens: resp.prompt_tokens,
                            completion_tokens: resp.completion_tokens,
                        })
                        .map_err(|source| LlmError::Cassette { tag: req.tag.clone(), source })?;
                }
                Ok(resp)
            }
        }
    }

    fn call_network(&self, req: &ChatRequest, hash: &str) -> Result<ChatResponse, LlmError> {
        self.call_network_timed(req, hash).map(|(r, _)| r)
    }

    fn call_network_timed(&self, req: &ChatRequest, hash: &str) -> Result<(ChatResponse, u64), LlmError> {
        let _slot = self.slots.acquire();
        let started_us = self.now_us();
        let started = Instant::now();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.transport.send(req, self.config.timeout()) {
                Ok(resp) => break Ok(resp),
                Err(e) if e.is_transient() && attempts <= self.config.max_retries => {
                    let delay = Duration::from_millis(self.config.backoff_base_ms.saturating_mul(1 << (attempts - 1)));
                    tracing::warn!(tag = %req.tag, attempt = attempts, error = %e, ?delay, "retrying chat call");
                    std::thread::sleep(delay);
                }
                Err(e) => break Err(e),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let (prompt_tokens, completion_tokens) = match &result {
            Ok(r) => (r.prompt_tokens, r.completion_tokens),
            Err(_) => (req.estimated_prompt_tokens(), 0),
        };
        self.log(LedgerEntry {
            seq: 0,
            tag: req.tag.clone(),
            hash: hash.to_string(),
            source: CallSource::Network,
            attempts,
            prompt_tokens,
            completion_tokens,
            started_us,
            finished_us: self.now_us(),
            latency_ms,
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        match result {
            Ok(resp) => Ok((resp, latency_ms)),
            Err(TransportError::Timeout) => Err(LlmError::Timeout { tag: req.tag.clone(), attempts }),
            Err(e) => Err(LlmError::Provider { tag: req.tag.clone(), attempts, message: e.to_string() }),
        }
    }
}
