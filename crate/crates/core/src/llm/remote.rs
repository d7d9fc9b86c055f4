//! OpenAI-compatible chat completions over HTTPS.

use std::time::Duration;

use serde_json::json;

use super::{LlmError, PromptRequest, Provider, ProviderConfig, ProviderFailure};

pub struct RemoteApi {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: String,
}

impl RemoteApi {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| LlmError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { http, endpoint: cfg.endpoint.clone(), model: cfg.model_name.clone(), api_key })
    }
}

impl Provider for RemoteApi {
    fn complete(&self, req: &PromptRequest) -> Result<String, ProviderFailure> {
        // reprompts sample instead of repeating the greedy answer
        let temperature = if req.attempt > 0 { req.temperature.max(0.7) } else { req.temperature };
        let body = json!({
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": req.rendered_text}],
        });
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| if e.is_timeout() { ProviderFailure::Timeout } else { ProviderFailure::Transient(e.to_string()) })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderFailure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderFailure::Fatal(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| ProviderFailure::Transient(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderFailure::Fatal("response has no message content".into()))
    }
}
