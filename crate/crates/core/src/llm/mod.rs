//! Chat-completion gateway: backends, response cache, retries and rate
//! limiting behind one `complete` call.

mod cache;
mod http;
mod mock;
mod retry;

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::PartsHasher;
use crate::prompt::{RenderedPrompt, Variant};

pub use cache::{CacheIndexEntry, ResponseCache};
pub(crate) use cache::write_atomic;
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{MockBackend, MockScript};
pub use retry::{RetryPolicy, TokenBucket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionParams {
    pub const DEFAULT_MAX_TOKENS: u32 = 512;

    pub fn new(model_id: impl Into<String>, temperature: f64) -> Self {
        Self {
            model_id: model_id.into(),
            temperature,
            max_tokens: Self::DEFAULT_MAX_TOKENS,
            stop: None,
        }
    }

    /// Parameters with the variant's default temperature (0.1 for the
    /// label-preserving chain, 0 otherwise).
    pub fn for_variant(model_id: impl Into<String>, variant: Variant) -> Self {
        Self::new(model_id, variant.default_temperature())
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_id.is_empty() {
            return Err(LlmError::Config("model id is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Digest identifying one request: prompt text, every completion parameter
/// and the draw index (distinguishes repeated samples of one prompt).
pub fn cache_key(prompt: &str, params: &CompletionParams, draw: u32) -> String {
    let temperature = if params.temperature == 0.0 { 0.0 } else { params.temperature };
    let stop = serde_json::to_string(&params.stop).expect("stop list serializes");
    let mut h = PartsHasher::new("attrmanip/request/v1");
    h.part(&params.model_id)
        .part(format!("{temperature:?}"))
        .part(params.max_tokens.to_string())
        .part(stop)
        .part(draw.to_string())
        .part(prompt);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub request_digest: String,
    pub attempt: u32,
}

/// What a backend receives for one call.
pub struct BackendRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a CompletionParams,
    pub digest: &'a str,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned an empty body")]
    Empty,
    #[error("no scripted response for request {digest}")]
    Unscripted { digest: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, req: &BackendRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request failed after {attempts} attempts (last status {last_status:?}): {message}")]
    Transport {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("backend refused request with status {status}: {body}")]
    Refused { status: u16, body: String },
    #[error("empty response for request {digest}")]
    EmptyResponse { digest: String },
    #[error("no scripted response for request {digest}")]
    Unscripted { digest: String },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("response cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl LlmError {
    /// Errors that make a whole run meaningless rather than one record.
    pub fn is_configuration(&self) -> bool {
        matches!(self, LlmError::Unscripted { .. } | LlmError::Config(_) | LlmError::EmptyPrompt | LlmError::Cache(_))
    }
}

/// One completion request. `attempt` selects a separate cache slot, so a
/// second attempt never replays the first attempt's cached text.
#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a CompletionParams,
    pub draw: u32,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub transport_retries: u64,
    pub backoff_ms: u64,
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Option<Mutex<TokenBucket>>,
    stats: Mutex<GatewayStats>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: None,
            stats: Mutex::new(GatewayStats::default()),
        }
    }

    pub fn mock(script: MockScript) -> Self {
        Self::new(Box::new(MockBackend::new(script))).with_retry(RetryPolicy::no_delay())
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(Mutex::new(TokenBucket::new(requests_per_minute, 1, Instant::now())));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn complete(&self, prompt: &RenderedPrompt, params: &CompletionParams) -> Result<RawResponse, LlmError> {
        self.complete_request(&CompletionRequest {
            prompt: &prompt.text,
            params,
            draw: 0,
            attempt: 1,
        })
    }

    pub fn complete_request(&self, req: &CompletionRequest<'_>) -> Result<RawResponse, LlmError> {
        if req.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        req.params.validate()?;
        let attempt = req.attempt.max(1);
        let digest = cache_key(req.prompt, req.params, req.draw);
        self.bump(|s| s.requests += 1);

        if let Some(cache) = &self.cache {
            if let Some(text) = cache.get(&digest, attempt)? {
                self.bump(|s| s.cache_hits += 1);
                return Ok(RawResponse {
                    text,
                    backend_id: self.backend.id().to_string(),
                    cached: true,
                    latency_ms: 0,
                    request_digest: digest,
                    attempt,
                });
            }
        }

        let breq = BackendRequest {
            prompt: req.prompt,
            params: req.params,
            digest: &digest,
        };
        let max_tries = self.retry.max_attempts.max(1);
        let mut tries = 0;
        loop {
            tries += 1;
            self.throttle();
            let started = Instant::now();
            self.bump(|s| s.backend_calls += 1);
            let outcome = self.backend.send(&breq);
            let latency_ms = started.elapsed().as_millis() as u64;
            match outcome {
                Ok(text) if text.trim().is_empty() => return Err(LlmError::EmptyResponse { digest }),
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&digest, attempt, &text)?;
                    }
                    return Ok(RawResponse {
                        text,
                        backend_id: self.backend.id().to_string(),
                        cached: false,
                        latency_ms,
                        request_digest: digest,
                        attempt,
                    });
                }
                Err(e) if e.retryable() && tries < max_tries => {
                    let delay = self.retry.delay_after(tries);
                    log::warn!("request {} try {tries} failed ({e}); retrying in {delay:?}", &digest[..12]);
                    self.bump(|s| {
                        s.transport_retries += 1;
                        s.backoff_ms += delay.as_millis() as u64;
                    });
                    std::thread::sleep(delay);
                }
                Err(e) if e.retryable() => {
                    let last_status = match &e {
                        BackendError::Status { status, .. } => Some(*status),
                        _ => None,
                    };
                    return Err(LlmError::Transport {
                        attempts: tries,
                        last_status,
                        message: e.to_string(),
                    });
                }
                Err(BackendError::Status { status, body }) => return Err(LlmError::Refused { status, body }),
                Err(BackendError::Empty) => return Err(LlmError::EmptyResponse { digest }),
                Err(BackendError::Unscripted { digest }) => return Err(LlmError::Unscripted { digest }),
                Err(BackendError::Config(m)) => return Err(LlmError::Config(m)),
                Err(BackendError::Transport(m)) => {
                    return Err(LlmError::Transport {
                        attempts: tries,
                        last_status: None,
                        message: m,
                    })
                }
            }
        }
    }

    fn throttle(&self) {
        if let Some(limiter) = &self.limiter {
            let wait = limiter.lock().expect("limiter lock").reserve(Instant::now());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
    }

    fn bump(&self, f: impl FnOnce(&mut GatewayStats)) {
        f(&mut self.stats.lock().expect("stats lock"));
    }
}
