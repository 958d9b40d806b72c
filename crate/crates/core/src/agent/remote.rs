//! Chat-completion client for hosted models.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{Backend, BackendError, GenerationRequest};

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
        }
    }
}

pub struct RemoteBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Wire body: `{model, messages, temperature, top_p, max_tokens}`.
    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        let user = request
            .messages
            .iter()
            .map(|m| format!("[{}]\n{}", m.speaker, m.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        json!({
            "model": self.config.model,
            "messages": [
                { "role": "system", "content": request.system_prompt },
                { "role": "user", "content": user },
            ],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        })
    }

    fn attempt(&self, body: &str, api_key: Option<&str>) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(body).map_err(map_transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        extract_completion(&text)
    }
}

fn map_transport(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
pub(crate) fn extract_completion(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    Ok(content.to_string())
}

impl Backend for RemoteBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if request.system_prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let api_key = match &self.config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Credential(var.clone()))?),
            None => None,
        };
        let body = self.request_body(request).to_string();
        let mut jitter = ChaCha8Rng::seed_from_u64(request.seed.unwrap_or(0));
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&body, api_key.as_deref()) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_retryable() && attempt < attempts => {
                    let base = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                    let delay = (base as f64 * jitter.random_range(0.5..=1.0)) as u64;
                    warn!(attempt, delay_ms = delay, error = %err, "retrying chat completion");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(err) if err.is_retryable() => {
                    return Err(BackendError::RetriesExhausted { attempts: attempt, last: Box::new(err) });
                }
                Err(err) => return Err(err),
            }
        }
    }
}
