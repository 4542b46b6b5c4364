//! Chat-completions over HTTP.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendDescriptor, BackendError, GenerationRequest, GenerationResult, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub id: String,
    pub base_url: String,
    pub path: String,
    /// Environment variable holding the credential.
    pub api_key_env: String,
    pub auth_header: String,
    /// Prefix placed before the key in the auth header; may be empty.
    pub auth_scheme: String,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub single_flight: bool,
    /// Overrides the request's model name, so one grid can mix models.
    pub model_name: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            id: "openai".into(),
            base_url: "https://api.openai.com/v1".into(),
            path: "/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer".into(),
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            single_flight: false,
            model_name: None,
        }
    }
}

impl HttpConfig {
    pub fn endpoint(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    /// Upper bound on how long one `complete` call may take.
    pub fn deadline(&self, timeout: Duration) -> Duration {
        timeout + Duration::from_millis(self.max_backoff_ms) * self.max_retries
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: HttpConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                BackendError::Config(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
        HttpBackend::new(config, key)
    }

    pub fn new(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, BackendError> {
        if config.base_url.is_empty() {
            return Err(BackendError::Config("base_url is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key: api_key.into(),
            client,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.config.model_name.as_deref().unwrap_or(&request.model_name),
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, request: &GenerationRequest, timeout: Duration) -> Result<(String, Option<Usage>), BackendError> {
        let mut builder = self
            .client
            .post(self.config.endpoint())
            .timeout(timeout)
            .header("Content-Type", "application/json")
            .body(self.body(request).to_string());
        if !self.config.auth_header.is_empty() {
            let value = if self.config.auth_scheme.is_empty() {
                self.api_key.clone()
            } else {
                format!("{} {}", self.config.auth_scheme, self.api_key)
            };
            builder = builder.header(self.config.auth_header.as_str(), value);
        }
        let resp = builder.send().map_err(map_transport)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp.text().map_err(map_transport)?;
        match status {
            200..=299 => parse_completion(&text),
            401 | 403 => Err(BackendError::Auth(truncate(&text))),
            429 => Err(BackendError::RateLimited { retry_after }),
            500..=599 => Err(BackendError::Server {
                status,
                body: truncate(&text),
            }),
            _ => Err(BackendError::Http {
                status,
                body: truncate(&text),
            }),
        }
    }
}

fn map_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

fn parse_completion(text: &str) -> Result<(String, Option<Usage>), BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?;
    let usage = v.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    });
    Ok((content.to_string(), usage))
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            id: self.config.id.clone(),
            single_flight: self.config.single_flight,
            deterministic: false,
        }
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let start = Instant::now();
        let deadline = start + self.config.deadline(request.timeout);
        let mut attempt = 0;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(BackendError::Timeout);
            }
            match self.attempt(request, request.timeout.min(remaining)) {
                Ok((text, usage)) => {
                    return Ok(GenerationResult {
                        text,
                        usage,
                        latency: start.elapsed(),
                        backend_id: self.config.id.clone(),
                    })
                }
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let mut wait = self.config.backoff(attempt);
                    if let BackendError::RateLimited { retry_after: Some(ra) } = &e {
                        wait = wait.max(*ra).min(Duration::from_millis(self.config.max_backoff_ms));
                    }
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    log::warn!("{}: {e}; retry {} in {:?}", self.config.id, attempt + 1, wait);
                    std::thread::sleep(wait.min(remaining));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_capped() {
        let c = HttpConfig::default();
        assert_eq!(c.backoff(0), Duration::from_millis(500));
        assert_eq!(c.backoff(1), Duration::from_millis(1000));
        assert_eq!(c.backoff(10), Duration::from_millis(8000));
    }

    #[test]
    fn missing_credential_is_config_error() {
        let cfg = HttpConfig {
            api_key_env: "MLPROMPT_TEST_SURELY_UNSET_KEY".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(HttpBackend::from_env(cfg), Err(BackendError::Config(_))));
    }

    #[test]
    fn completion_parsing() {
        let (t, u) = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(t, "hi");
        assert_eq!(u.unwrap().prompt_tokens, 3);
        assert!(matches!(parse_completion("{}"), Err(BackendError::MalformedResponse(_))));
    }
}
