//! Chat-completion backends, prompt assembly and response parsing.
//!
//! Every backend implements [`ChatBackend`]; extraction code never knows
//! which provider answered. The replay backend returns recorded responses
//! keyed by [`request_key`], which makes whole pipeline runs reproducible
//! offline.

mod http;
mod payload;
mod prompt;
mod replay;

use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

pub use http::OpenAiCompatibleBackend;
pub use payload::{
    extract_json_object, parse_entity_payload, parse_reflection_payload, CandidateEntity, CandidateValue,
    ParsedPayload, ReflectionScores,
};
pub use prompt::{
    render_extraction_prompt, render_reflection_prompt, ModelConfig, PromptContext, StateContext, NO_PRIOR_ENTITIES,
};
pub use replay::{RecordingBackend, ReplayBackend};

pub const API_KEY_ENV: &str = "STINDEX_API_KEY";
pub const BASE_URL_ENV: &str = "STINDEX_BASE_URL";
pub const MODEL_ENV: &str = "STINDEX_MODEL";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("request rejected (HTTP {status}): {message}")]
    InvalidRequest { status: u16, message: String },
    #[error("no recorded response for request key {0}")]
    ReplayMiss(String),
    #[error("prompt of {chars} chars exceeds budget of {budget} chars")]
    ContextOverflow { chars: usize, budget: usize },
    #[error("no JSON object recoverable from response")]
    PayloadUnparseable,
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Transport-level failures worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::BackendUnavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Provider text, verbatim.
    pub text: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Stable replay key: hex SHA-256 over model, system text and user text.
pub fn request_key(req: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    for part in [&req.model, &req.system, &req.user] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

/// Sends a request, retrying transient failures with exponential backoff.
pub fn complete(
    backend: &dyn ChatBackend,
    req: &CompletionRequest,
    retry: &RetryPolicy,
) -> Result<CompletionResponse, LlmError> {
    let mut delay = retry.base_delay;
    let mut attempt = 1;
    loop {
        match backend.complete(req) {
            Err(err) if err.is_transient() && attempt < retry.max_attempts => {
                warn!(%err, attempt, "transient backend error, retrying");
                thread::sleep(delay);
                delay = delay.mul_f64(retry.factor);
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompatibleHttp,
    ReplayFixture,
}

/// Serializable backend description. Holds the *name* of the environment
/// variable carrying the API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

impl BackendSpec {
    pub fn replay(fixture_path: impl Into<PathBuf>, model: &str) -> Self {
        Self {
            kind: BackendKind::ReplayFixture,
            base_url: None,
            fixture_path: Some(fixture_path.into()),
            model: model.to_string(),
            auth_env: None,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn http(base_url: &str, model: &str) -> Self {
        Self {
            kind: BackendKind::OpenaiCompatibleHttp,
            base_url: Some(base_url.to_string()),
            fixture_path: None,
            model: model.to_string(),
            auth_env: Some(API_KEY_ENV.to_string()),
            max_in_flight: default_in_flight(),
        }
    }

    /// HTTP spec from `STINDEX_BASE_URL` / `STINDEX_MODEL`.
    pub fn http_from_env() -> Result<Self, LlmError> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| LlmError::Config(format!("{BASE_URL_ENV} is not set")))?;
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "gpt-4o-mini".to_string());
        Ok(Self::http(&base, &model))
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::ReplayFixture => match &self.fixture_path {
                Some(path) if path.is_file() => Ok(()),
                Some(path) => Err(LlmError::Config(format!(
                    "fixture file {} does not exist",
                    path.display()
                ))),
                None => Err(LlmError::Config("replay backend requires a fixture path".into())),
            },
            BackendKind::OpenaiCompatibleHttp => match &self.base_url {
                Some(url) if !url.trim().is_empty() => Ok(()),
                _ => Err(LlmError::Config("http backend requires a base URL".into())),
            },
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::ReplayFixture => {
                let path = self.fixture_path.as_deref().expect("validated");
                Arc::new(ReplayBackend::load(path)?)
            }
            BackendKind::OpenaiCompatibleHttp => {
                let key = self.auth_env.as_deref().and_then(|var| std::env::var(var).ok());
                Arc::new(
                    OpenAiCompatibleBackend::new(self.base_url.as_deref().expect("validated"), key)
                        .with_max_in_flight(self.max_in_flight),
                )
            }
        })
    }
}
