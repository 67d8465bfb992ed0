use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest};

pub const ENV_ENDPOINT: &str = "AUDIT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "AUDIT_LLM_API_KEY";
pub const ENV_MODEL: &str = "AUDIT_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Model name sent on the wire; falls back to the request's model tag.
    pub model: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, String> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| format!("{ENV_ENDPOINT} is not set"))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            model: std::env::var(ENV_MODEL).ok().filter(|m| !m.is_empty()),
            timeout: Duration::from_secs(300),
        })
    }
}

/// OpenAI-style `chat/completions` client.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { config, client })
    }

    pub fn request_body(&self, req: &ChatRequest) -> Value {
        let model = self.config.model.clone().unwrap_or_else(|| req.model_tag.clone());
        let messages: Vec<Value> = req
            .messages()
            .into_iter()
            .map(|(role, content)| json!({ "role": role, "content": content }))
            .collect();
        json!({
            "model": model,
            "messages": messages,
            "temperature": req.sampling.temperature,
            "top_p": req.sampling.top_p,
        })
    }
}

/// Extracts `choices[0].message.content` from a completion payload.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.endpoint)
    }

    fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.config.endpoint).json(&self.request_body(req));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Rejected(format!("HTTP {status}: {body}")));
        }
        parse_completion(&body)
    }
}
