use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use super::{request_key, ChatBackend, CompletionRequest, CompletionResponse, LlmError, TokenUsage};

/// Returns recorded responses; a JSON object mapping request key to text.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let responses = serde_json::from_str(text).map_err(|e| LlmError::Config(format!("replay fixture: {e}")))?;
        Ok(Self { responses })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let key = request_key(req);
        let text = self.responses.get(&key).ok_or(LlmError::ReplayMiss(key))?;
        Ok(CompletionResponse {
            text: text.clone(),
            finish_reason: "stop".to_string(),
            usage: TokenUsage::default(),
            latency_ms: 0,
        })
    }
}

/// Wraps a backend and records every successful exchange for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> BTreeMap<String, String> {
        self.recorded.lock().expect("recording lock").clone()
    }

    /// Pretty, key-sorted JSON suitable for committing as a fixture.
    pub fn to_fixture_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.recorded()).expect("map serializes");
        out.push('\n');
        out
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let resp = self.inner.complete(req)?;
        self.recorded
            .lock()
            .expect("recording lock")
            .insert(request_key(req), resp.text.clone());
        Ok(resp)
    }
}
