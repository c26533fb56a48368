use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, CompletionRequest, CompletionResponse, LlmError, TokenUsage};
use crate::net;

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for `POST /v1/chat/completions` with bearer auth.
pub struct OpenAiCompatibleBackend {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    in_flight: InFlight,
}

impl fmt::Debug for OpenAiCompatibleBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiCompatibleBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_in_flight", &self.in_flight.cap)
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiCompatibleBackend {
    /// `base_url` may be the server root or already end in `/v1`.
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        Self {
            endpoint,
            api_key,
            timeout: Duration::from_secs(120),
            in_flight: InFlight::new(4),
        }
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = InFlight::new(cap);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ChatBackend for OpenAiCompatibleBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let _permit = self.in_flight.acquire();
        let body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let started = Instant::now();
        let mut request = net::agent(self.timeout).post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(status)),
            429 | 500..=599 => return Err(LlmError::BackendUnavailable(format!("HTTP {status}"))),
            _ => {
                return Err(LlmError::InvalidRequest {
                    status,
                    message: text.chars().take(200).collect(),
                })
            }
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::BackendUnavailable(format!("malformed completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::BackendUnavailable("completion has no choices".into()))?;
        Ok(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
            usage: parsed
                .usage
                .map(|u| TokenUsage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                })
                .unwrap_or_default(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
