//! Chat-completion backends.

mod extract;
mod http;
mod scripted;
mod transcript;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use extract::{extract_json, extract_json_array, ExtractError};
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{FnBackend, ScriptEntry, ScriptedBackend};
pub use transcript::{Transcript, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(rename = "timeout_ms", with = "duration_ms")]
    pub timeout: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, params: &RequestParams) -> Self {
        GenerationRequest {
            messages: vec![Message::user(prompt)],
            model_name: params.model_name.clone(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            timeout: params.timeout,
            seed: params.seed,
        }
    }

    /// All message contents joined by blank lines; what scripted predicates see.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::Config("request has no messages".into()));
        }
        // written to also reject NaN
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Sampling parameters shared by every call of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(rename = "timeout_ms", with = "duration_ms")]
    pub timeout: Duration,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams {
            model_name: "gpt-4o".into(),
            temperature: 0.7,
            max_tokens: 2048,
            timeout: Duration::from_secs(120),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Option<Usage>,
    #[serde(rename = "latency_ms", with = "duration_ms")]
    pub latency: Duration,
    pub backend_id: String,
}

/// Static facts about a backend that callers schedule around.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    /// Calls must not overlap.
    pub single_flight: bool,
    /// Identical inputs give identical outputs; transcripts omit timing.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("http error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("script exhausted after {0} calls")]
    ScriptExhausted(usize),
    #[error("script entry {index} rejected the prompt: {reason}")]
    ScriptMismatch { index: usize, reason: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::RateLimited { .. } | BackendError::Server { .. } | BackendError::Transport(_)
        )
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.descriptor().id)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).complete(request)
    }
}

/// Validates the request and forwards it.
pub fn complete(backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
    request.validate()?;
    backend.complete(request)
}
