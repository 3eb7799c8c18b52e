//! Chat-completion client for LLM-backed graph construction.
//!
//! Speaks the common chat-completion wire shape ({model, messages} in,
//! choices\[0\].message.content out) so the concrete provider is pure
//! configuration. Retries 429/5xx responses with exponential backoff, caps
//! concurrent in-flight requests, keeps a usage ledger for cost reports, and
//! can memoize responses in an on-disk JSONL cache keyed by request hash.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunk::{token_count, Chunk};
use crate::construct::{render_prompt, Oracle, OracleError};

/// Connection, rate, and pricing settings for the chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Upper bound on simultaneously outstanding requests.
    pub max_concurrent_requests: usize,
    /// Retries after the first attempt, applied to 429 and 5xx responses.
    pub max_retries: u32,
    /// Base backoff delay; doubles per retry.
    pub retry_backoff_ms: u64,
    pub price_per_1k_input_tokens: f64,
    pub price_per_1k_output_tokens: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".to_string(),
            model_name: "qwen-turbo".to_string(),
            api_key_env: "LLM_API_KEY".to_string(),
            timeout_secs: 60,
            max_concurrent_requests: 4,
            max_retries: 3,
            retry_backoff_ms: 250,
            price_per_1k_input_tokens: 0.0,
            price_per_1k_output_tokens: 0.0,
        }
    }
}

/// Client-side failures.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("api key environment variable `{0}` is not set")]
    Auth(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("provider returned status {status}: {body_excerpt}")]
    Provider { status: u16, body_excerpt: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("response cache at {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// Accumulated request and token totals with an estimated cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_cost: f64,
    /// True when any token count came from the whitespace fallback rather
    /// than provider-reported usage.
    pub contains_estimates: bool,
}

impl UsageLedger {
    fn apply(&mut self, delta: &UsageDelta) {
        self.requests += 1;
        self.input_tokens += delta.input_tokens;
        self.output_tokens += delta.output_tokens;
        self.estimated_cost += delta.cost;
        self.contains_estimates |= delta.estimated;
    }
}

/// Usage attributable to a single completed request.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageDelta {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    /// Token counts were estimated, not provider-reported.
    pub estimated: bool,
}

/// A completed round trip.
#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub usage: UsageDelta,
}

// Counting gate bounding in-flight requests.
struct Gate {
    active: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Self {
            active: Mutex::new(0),
            cv: Condvar::new(),
            cap: cap.max(1),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut active = self.active.lock().expect("gate poisoned");
        while *active >= self.cap {
            active = self.cv.wait(active).expect("gate poisoned");
        }
        *active += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().expect("gate poisoned");
        *active -= 1;
        self.gate.cv.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    request_hash: String,
    response: String,
}

struct ResponseCache {
    path: PathBuf,
    entries: HashMap<String, String>,
}

impl ResponseCache {
    fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let parsed: CacheLine =
                        serde_json::from_str(line).map_err(|e| BackendError::Cache {
                            path: path.to_path_buf(),
                            message: e.to_string(),
                        })?;
                    entries.insert(parsed.request_hash, parsed.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(BackendError::Cache {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn get(&self, hash: &str) -> Option<&String> {
        self.entries.get(hash)
    }

    fn put(&mut self, hash: String, response: String) -> Result<(), BackendError> {
        let line = serde_json::to_string(&CacheLine {
            request_hash: hash.clone(),
            response: response.clone(),
        })
        .expect("cache line serializes");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Cache {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        writeln!(file, "{line}").map_err(|e| BackendError::Cache {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        self.entries.insert(hash, response);
        Ok(())
    }
}

/// Blocking chat-completion client. Safe to share across threads; the
/// internal gate enforces `max_concurrent_requests` and every ledger update
/// is atomic.
pub struct ChatClient {
    config: BackendConfig,
    agent: ureq::Agent,
    gate: Gate,
    ledger: Mutex<UsageLedger>,
    cache: Option<Mutex<ResponseCache>>,
}

impl ChatClient {
    pub fn new(config: BackendConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Self {
            gate: Gate::new(config.max_concurrent_requests),
            agent: ureq::Agent::new_with_config(agent_config),
            ledger: Mutex::new(UsageLedger::default()),
            cache: None,
            config,
        }
    }

    /// Enable the on-disk response cache (one `{request_hash, response}` JSON
    /// record per line). Cache hits skip the network and the ledger.
    pub fn with_cache(config: BackendConfig, path: &Path) -> Result<Self, BackendError> {
        let cache = ResponseCache::open(path)?;
        let mut client = Self::new(config);
        client.cache = Some(Mutex::new(cache));
        Ok(client)
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Snapshot of the usage ledger.
    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger poisoned").clone()
    }

    fn request_hash(&self, prompt: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config.model_name.as_bytes());
        hasher.update([0u8]);
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One chat-completion round trip. 429 and 5xx responses are retried
    /// with exponential backoff up to the configured cap; the ledger is
    /// updated from provider usage when present, else from whitespace token
    /// counts flagged as estimates.
    pub fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let api_key = std::env::var(&self.config.api_key_env)
            .map_err(|_| BackendError::Auth(self.config.api_key_env.clone()))?;

        let hash = self.cache.as_ref().map(|_| self.request_hash(prompt));
        if let (Some(cache), Some(hash)) = (&self.cache, &hash) {
            if let Some(hit) = cache.lock().expect("cache poisoned").get(hash) {
                return Ok(Completion {
                    text: hit.clone(),
                    usage: UsageDelta {
                        input_tokens: 0,
                        output_tokens: 0,
                        cost: 0.0,
                        estimated: false,
                    },
                });
            }
        }

        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();

        let _slot = self.gate.acquire();
        let mut attempt = 0u32;
        loop {
            let result = self
                .agent
                .post(&self.config.endpoint_url)
                .header("Authorization", &format!("Bearer {api_key}"))
                .header("Content-Type", "application/json")
                .send(body.as_bytes());

            let mut response = match result {
                Ok(r) => r,
                Err(ureq::Error::Timeout(t)) => return Err(BackendError::Timeout(t.to_string())),
                Err(e) => return Err(BackendError::Transport(e.to_string())),
            };
            let status = response.status().as_u16();
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Transport(e.to_string()))?;

            if status == 429 || status >= 500 {
                if attempt < self.config.max_retries {
                    let delay = self.config.retry_backoff_ms.saturating_mul(1 << attempt);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                    continue;
                }
                return Err(BackendError::Provider {
                    status,
                    body_excerpt: excerpt(&text),
                });
            }
            if status == 401 || status == 403 {
                return Err(BackendError::Auth(format!(
                    "provider rejected credentials (status {status})"
                )));
            }
            if !(200..300).contains(&status) {
                return Err(BackendError::Provider {
                    status,
                    body_excerpt: excerpt(&text),
                });
            }

            let completion = self.parse_success(prompt, status, &text)?;
            self.ledger
                .lock()
                .expect("ledger poisoned")
                .apply(&completion.usage);
            if let (Some(cache), Some(hash)) = (&self.cache, hash) {
                cache
                    .lock()
                    .expect("cache poisoned")
                    .put(hash, completion.text.clone())?;
            }
            return Ok(completion);
        }
    }

    fn parse_success(
        &self,
        prompt: &str,
        status: u16,
        body: &str,
    ) -> Result<Completion, BackendError> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|_| BackendError::Provider {
                status,
                body_excerpt: excerpt(body),
            })?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| BackendError::Provider {
                status,
                body_excerpt: format!("missing choices[0].message.content in {}", excerpt(body)),
            })?
            .to_string();

        let reported_in = value.pointer("/usage/prompt_tokens").and_then(|v| v.as_u64());
        let reported_out = value
            .pointer("/usage/completion_tokens")
            .and_then(|v| v.as_u64());
        let estimated = reported_in.is_none() || reported_out.is_none();
        let input_tokens = reported_in.unwrap_or_else(|| token_count(prompt) as u64);
        let output_tokens = reported_out.unwrap_or_else(|| token_count(&text) as u64);
        let cost = input_tokens as f64 / 1000.0 * self.config.price_per_1k_input_tokens
            + output_tokens as f64 / 1000.0 * self.config.price_per_1k_output_tokens;

        Ok(Completion {
            text,
            usage: UsageDelta {
                input_tokens,
                output_tokens,
                cost,
                estimated,
            },
        })
    }
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    if body.len() <= MAX {
        body.to_string()
    } else {
        let mut end = MAX;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &body[..end])
    }
}

/// Oracle backed by [`ChatClient`]: renders the instruction prompt for each
/// chunk and echoes rejection messages back on retries. Holds the client in
/// an [`Arc`](std::sync::Arc) so callers can keep a handle for ledger
/// reporting.
pub struct ChatOracle {
    client: std::sync::Arc<ChatClient>,
}

impl ChatOracle {
    pub fn new(client: std::sync::Arc<ChatClient>) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }
}

impl Oracle for ChatOracle {
    fn propose(
        &self,
        graph_mermaid: &str,
        chunk: &Chunk,
        prior_error: Option<&str>,
    ) -> Result<String, OracleError> {
        let mut prompt = render_prompt(graph_mermaid, &chunk.text);
        if let Some(err) = prior_error {
            prompt.push_str(&format!(
                "\n\nYour previous response was rejected: {err}\nReturn a corrected strict JSON object."
            ));
        }
        self.client
            .complete(&prompt)
            .map(|c| c.text)
            .map_err(|e| OracleError(e.to_string()))
    }
}
