//! Chat-completion gateway: pluggable backends, retry with exponential
//! backoff, and a content-addressed response cache.
//!
//! The gateway is format-agnostic. Callers validate the returned text and run
//! their own re-ask loops.

mod cache;
mod http;
pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cultural_space::ConfigId;

pub use cache::{CacheRecord, ResponseCache};
pub use http::{HttpBackend, HttpConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use mock::{MockBackend, MockScript};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

/// Which elicitation a request belongs to. Used by the mock backend and for
/// logging; never sent over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestClass {
    PersonaGen,
    Ivs,
    Wvb,
    Mfq,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub class: RequestClass,
    pub config_id: ConfigId,
    /// Sub-item within the elicitation, e.g. a probe question id.
    pub item: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_turns: Vec<String>,
    /// Assistant replies already given in this conversation; reply `i`
    /// follows user turn `i`. Always shorter than `user_turns`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior_replies: Vec<String>,
    pub sampling: Sampling,
    pub model_tag: String,
    #[serde(skip)]
    pub context: Option<RequestContext>,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, user_turn: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_turns: vec![user_turn.into()],
            prior_replies: Vec::new(),
            sampling: Sampling::default(),
            model_tag: String::new(),
            context: None,
        }
    }

    pub fn with_context(mut self, class: RequestClass, config_id: ConfigId, item: Option<String>) -> Self {
        self.context = Some(RequestContext { class, config_id, item });
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_turns.is_empty() {
            return Err(GatewayError::InvalidRequest("no user turns".into()));
        }
        if self.prior_replies.len() >= self.user_turns.len() {
            return Err(GatewayError::InvalidRequest(
                "conversation must end with a user turn".into(),
            ));
        }
        let Sampling { temperature, top_p } = self.sampling;
        if !(temperature.is_finite() && temperature >= 0.0 && top_p.is_finite() && top_p >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "invalid sampling parameters {temperature}/{top_p}"
            )));
        }
        Ok(())
    }

    /// Content address of the request: model tag, every prompt byte, sampling
    /// parameters and the cache salt.
    pub fn cache_key(&self, salt: &str) -> String {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            model_tag: &'a str,
            system_text: &'a str,
            user_turns: &'a [String],
            prior_replies: &'a [String],
            temperature: f64,
            top_p: f64,
            salt: &'a str,
        }
        let material = KeyMaterial {
            model_tag: &self.model_tag,
            system_text: &self.system_text,
            user_turns: &self.user_turns,
            prior_replies: &self.prior_replies,
            temperature: self.sampling.temperature,
            top_p: self.sampling.top_p,
            salt,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Interleaved `(role, text)` messages in conversation order.
    pub fn messages(&self) -> Vec<(&'static str, &str)> {
        let mut out = Vec::with_capacity(1 + self.user_turns.len() * 2);
        if !self.system_text.is_empty() {
            out.push(("system", self.system_text.as_str()));
        }
        for (i, turn) in self.user_turns.iter().enumerate() {
            out.push(("user", turn.as_str()));
            if let Some(reply) = self.prior_replies.get(i) {
                out.push(("assistant", reply.as_str()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub backend_id: String,
    pub cached: bool,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_meta: BackendMeta,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: rate limits, server errors, dropped connections.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("unparseable transport payload: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    salt: String,
    model_tag: String,
    sampling: Sampling,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            salt: String::new(),
            model_tag: "default".into(),
            sampling: Sampling::default(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_salt(mut self, salt: impl Into<String>) -> Self {
        self.salt = salt.into();
        self
    }

    pub fn with_model_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Fills gateway defaults (model tag, sampling) into a request built by
    /// an elicitation module.
    pub fn prepare(&self, mut req: ChatRequest) -> ChatRequest {
        if req.model_tag.is_empty() {
            req.model_tag = self.model_tag.clone();
        }
        req.sampling = self.sampling;
        req
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let key = req.cache_key(&self.salt);
        if let Some(cache) = &self.cache {
            if let Some(record) = cache.get(&key) {
                return Ok(ChatResponse {
                    text: record.response,
                    backend_meta: BackendMeta {
                        backend_id: record.backend_id,
                        cached: true,
                        attempt_count: record.attempt_count.max(1),
                    },
                });
            }
        }

        let attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let delay = self.retry.delay(attempt - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            match self.backend.send(req) {
                Ok(text) => {
                    let meta = BackendMeta {
                        backend_id: self.backend.id(),
                        cached: false,
                        attempt_count: attempt,
                    };
                    if let Some(cache) = &self.cache {
                        cache.put(&CacheRecord {
                            key,
                            request: req.clone(),
                            response: text.clone(),
                            backend_id: meta.backend_id.clone(),
                            attempt_count: attempt,
                        })?;
                    }
                    return Ok(ChatResponse {
                        text,
                        backend_meta: meta,
                    });
                }
                Err(BackendError::Transient(msg)) => {
                    log::debug!("attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                }
                Err(BackendError::Rejected(msg)) => return Err(GatewayError::Rejected(msg)),
                Err(BackendError::Protocol(msg)) => return Err(GatewayError::Protocol(msg)),
            }
        }
        Err(GatewayError::Exhausted { attempts, last })
    }
}

/// Order-preserving map over `items` with at most `workers` threads.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}
