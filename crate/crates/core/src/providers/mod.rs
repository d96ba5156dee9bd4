//! Chat-completion and embedding backends.
//!
//! Every backend implements [`ChatProvider`] or [`EmbeddingProvider`]. Callers
//! go through [`chat_complete`] and [`embed`], which validate requests and
//! enforce the client-side context guard before dispatch. Transient failures
//! are retried inside the network backends with [`RetryPolicy`].

mod dispatch;
mod embedding;
mod http;
mod mock;
mod replay;
mod retry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dispatch::{dispatch_ordered, Throttled, ThrottleConfig};
pub use embedding::{cosine, EmbeddingVector, HashEmbedder, HttpEmbedder, DEFAULT_EMBEDDING_DIM};
pub use http::{
    HttpChatProvider, HttpConfig, HttpReply, HttpTransport, PromptStyle, TransportError,
    UreqTransport, WireMessage,
};
pub use mock::{FixtureRule, MockChatProvider, MockFixture, MockStyle};
pub use replay::{prompt_digest, ReplayProvider};
pub use retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },

    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },

    #[error("input of ~{estimated} tokens exceeds context of {limit}")]
    ContextOverflow { estimated: usize, limit: usize },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// Retryable failure: rate limit, 5xx, timeout or connection error.
    #[error("transient failure: {0}")]
    Transient(String),

    /// Non-retryable HTTP error other than auth.
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("unexpected response body: {0}")]
    Decode(String),

    #[error("no cached response for prompt {0}")]
    ReplayMiss(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }

    /// Failures after which further requests to the same backend are
    /// pointless.
    pub fn is_fatal(&self) -> bool {
        matches!(self, ProviderError::Auth { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProviderError::Exhausted { .. } => "provider_exhausted",
            ProviderError::Auth { .. } => "auth",
            ProviderError::ContextOverflow { .. } => "context_overflow",
            ProviderError::InvalidRequest(_) => "invalid_request",
            ProviderError::Transient(_) => "transient",
            ProviderError::Http { .. } => "http",
            ProviderError::Decode(_) => "decode",
            ProviderError::ReplayMiss(_) => "replay_miss",
        }
    }
}

/// Default temperature: greedy decoding.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty system prompt".into()));
        }
        if self.user.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty user prompt".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Rough input size in tokens: characters / 4, rounded up. Approximate
    /// by nature; real tokenizers vary by model and language.
    pub fn estimated_input_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub provider_id: String,
    /// Transport attempts spent on this response, including the successful one.
    #[serde(default = "one")]
    pub attempts: u32,
}

fn one() -> u32 {
    1
}

/// Decoding settings applied to every rendered prompt in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Empty means the provider's configured model.
    pub model_id: String,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_id: String::new(),
        }
    }
}

impl GenerationSettings {
    pub fn request(&self, prompt: &crate::prompts::RenderedPrompt) -> ChatRequest {
        ChatRequest {
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            model_id: self.model_id.clone(),
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Declared input context in tokens, if bounded.
    fn context_tokens(&self) -> Option<usize> {
        None
    }

    /// Upper bound on concurrent requests this backend accepts.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn context_tokens(&self) -> Option<usize> {
        (**self).context_tokens()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(req)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn context_tokens(&self) -> Option<usize> {
        (**self).context_tokens()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(req)
    }
}

/// Validates `req`, rejects it client-side if it cannot fit the provider's
/// context, then dispatches.
pub fn chat_complete(
    provider: &dyn ChatProvider,
    req: &ChatRequest,
) -> Result<ChatResponse, ProviderError> {
    req.validate()?;
    if let Some(limit) = provider.context_tokens() {
        let estimated = req.estimated_input_tokens();
        if estimated > limit {
            return Err(ProviderError::ContextOverflow { estimated, limit });
        }
    }
    provider.complete(req)
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Embeds non-empty `text`, checking the returned dimension and finiteness.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
    }
    let values = provider.embed_raw(text)?;
    if values.len() != provider.dimension() {
        return Err(ProviderError::Decode(format!(
            "expected dimension {}, got {}",
            provider.dimension(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ProviderError::Decode("non-finite embedding value".into()));
    }
    Ok(EmbeddingVector {
        values,
        source_text: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(Option<usize>);

    impl ChatProvider for Echo {
        fn id(&self) -> &str {
            "echo"
        }
        fn context_tokens(&self) -> Option<usize> {
            self.0
        }
        fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
            Ok(ChatResponse {
                text: req.user.clone(),
                prompt_tokens: 0,
                completion_tokens: 0,
                provider_id: "echo".into(),
                attempts: 1,
            })
        }
    }

    #[test]
    fn empty_user_rejected_before_dispatch() {
        let err = chat_complete(&Echo(None), &ChatRequest::new("sys", "  ")).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidRequest(_)));
    }

    #[test]
    fn context_guard_uses_char_estimate() {
        let req = ChatRequest::new("abcd", "x".repeat(40));
        // 1 + 10 tokens
        assert_eq!(req.estimated_input_tokens(), 11);
        assert!(chat_complete(&Echo(Some(11)), &req).is_ok());
        assert_eq!(
            chat_complete(&Echo(Some(10)), &req).unwrap_err(),
            ProviderError::ContextOverflow {
                estimated: 11,
                limit: 10
            }
        );
    }

    #[test]
    fn negative_temperature_rejected() {
        let mut req = ChatRequest::new("s", "u");
        req.temperature = -0.1;
        assert!(req.validate().is_err());
    }
}
