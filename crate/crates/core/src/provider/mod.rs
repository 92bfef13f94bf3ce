//! Completion providers: a remote OpenAI-compatible HTTP client and a
//! deterministic scripted provider.

mod http;
mod scripted;

pub use http::{
    HttpProvider, HttpProviderConfig, HttpReply, HttpTransport, ReqwestTransport, API_KEY_ENV,
};
pub use scripted::{PatternRule, Script, ScriptedCall, ScriptedProvider};

use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_CANDIDATES: usize = 3;
pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub n_candidates: usize,
    pub max_tokens: usize,
    /// Routing key for scripted replies (the name of the policy being
    /// queried). Never sent to a remote model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            n_candidates: DEFAULT_CANDIDATES,
            max_tokens: DEFAULT_MAX_TOKENS,
            stream: None,
        }
    }

    pub fn with_stream(mut self, stream: impl Into<String>) -> Self {
        self.stream = Some(stream.into());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.n_candidates == 0 {
            return Err(ProviderError::InvalidRequest(
                "at least one candidate must be requested".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub candidates: Vec<String>,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("script has no reply left for stream `{0}`")]
    ScriptExhausted(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("model API returned status {status}: {body}")]
    Api { status: u16, body: String },
    #[error("could not decode model response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("completion has no candidates")]
    NoCandidates,
}

/// A source of completions. Implementations must tolerate concurrent calls
/// from several episodes.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(req)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(req)
    }
}

/// The first candidate is the one acted upon.
pub fn select_candidate(result: &CompletionResult) -> Result<&str, ProviderError> {
    result
        .candidates
        .first()
        .map(String::as_str)
        .ok_or(ProviderError::NoCandidates)
}
