//! HTTP adapter for an OpenAI-compatible chat-completions endpoint.

use std::time::Duration;

use serde_json::{json, Value};
use taskmcp_core::rerank::{BackendError, RerankBackend, RerankRequest};

pub const ENV_URL: &str = "TASKMCP_RERANK_URL";
pub const ENV_MODEL: &str = "TASKMCP_RERANK_MODEL";
pub const ENV_API_KEY: &str = "TASKMCP_RERANK_API_KEY";
pub const ENV_TIMEOUT: &str = "TASKMCP_RERANK_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Log raw prompts and answers at debug level.
    pub debug: bool,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("external re-ranker needs an endpoint (--rerank-url or {ENV_URL})")]
    MissingEndpoint,
    #[error("endpoint `{0}` must start with http:// or https://")]
    BadEndpoint(String),
    #[error("invalid timeout `{0}`")]
    BadTimeout(String),
}

impl ExternalConfig {
    /// Explicit values win over the environment.
    pub fn resolve(
        endpoint: Option<String>,
        model: Option<String>,
        timeout_secs: Option<f64>,
        debug: bool,
    ) -> Result<Self, ConfigError> {
        let endpoint = endpoint.or_else(|| std::env::var(ENV_URL).ok()).ok_or(ConfigError::MissingEndpoint)?;
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(ConfigError::BadEndpoint(endpoint));
        }
        let model = model.or_else(|| std::env::var(ENV_MODEL).ok()).unwrap_or_else(|| "default".to_string());
        let timeout_secs = match timeout_secs {
            Some(t) => t,
            None => match std::env::var(ENV_TIMEOUT) {
                Ok(raw) => raw.parse().map_err(|_| ConfigError::BadTimeout(raw))?,
                Err(_) => 30.0,
            },
        };
        if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
            return Err(ConfigError::BadTimeout(timeout_secs.to_string()));
        }
        Ok(ExternalConfig {
            endpoint,
            model,
            timeout: Duration::from_secs_f64(timeout_secs),
            debug,
            api_key_env: ENV_API_KEY.to_string(),
        })
    }
}

pub struct ExternalBackend {
    config: ExternalConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl ExternalBackend {
    pub fn new(config: ExternalConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; calling the re-ranker without credentials", config.api_key_env);
        }
        ExternalBackend { config, agent, api_key }
    }

    fn call(&self, prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "top_p": 1,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(map_err)?;
        let value: Value = resp.body_mut().read_json().map_err(map_err)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Other("response has no choices[0].message.content".to_string()))
    }
}

fn map_err(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl RerankBackend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn complete(&self, prompt: &str, _request: &RerankRequest) -> Result<String, BackendError> {
        if self.config.debug {
            log::debug!("re-rank prompt:\n{prompt}");
        }
        let out = self.call(prompt);
        if self.config.debug {
            log::debug!("re-rank answer: {out:?}");
        }
        out
    }
}
