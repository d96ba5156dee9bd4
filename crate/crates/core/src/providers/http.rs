//! OpenAI-compatible chat-completions backend.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, RetryPolicy};

/// How the system/user pair is laid out on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Separate `system` and `user` messages.
    #[default]
    Chat,
    /// One `user` message with the system text wrapped in LLaMA-2
    /// `<<SYS>>` markers.
    Llama,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

impl PromptStyle {
    pub fn to_messages(self, req: &ChatRequest) -> Vec<WireMessage> {
        match self {
            PromptStyle::Chat => vec![
                WireMessage {
                    role: "system".into(),
                    content: req.system.clone(),
                },
                WireMessage {
                    role: "user".into(),
                    content: req.user.clone(),
                },
            ],
            PromptStyle::Llama => vec![WireMessage {
                role: "user".into(),
                content: format!(
                    "[INST] <<SYS>>\n{}\n<</SYS>>\n\n{} [/INST]",
                    req.system, req.user
                ),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// 0 disables the ceiling.
    pub requests_per_minute: u32,
    /// Declared input context; 0 means unbounded.
    pub context_tokens: usize,
    pub style: PromptStyle,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "gpt-3.5-turbo-16k".into(),
            timeout_secs: 120,
            max_retries: 3,
            max_in_flight: 4,
            requests_per_minute: 0,
            context_tokens: 16_000,
            style: PromptStyle::Chat,
        }
    }
}

impl HttpConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_retries + 1,
            ..RetryPolicy::default()
        }
    }

    pub fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
    Other(String),
}

/// Minimal JSON-over-HTTP POST; swapped for a stub in tests.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                TransportError::Connect(e.to_string())
            }
            other => TransportError::Other(other.to_string()),
        };
        let mut resp = req.send_json(body).map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(HttpReply { status, body })
    }
}

/// Maps a non-2xx reply to the error taxonomy shared by chat and embedding
/// endpoints.
pub(super) fn classify_status(reply: &HttpReply) -> ProviderError {
    match reply.status {
        401 | 403 => ProviderError::Auth {
            status: reply.status,
        },
        429 | 500..=599 => ProviderError::Transient(format!("HTTP {}", reply.status)),
        400 | 413 if mentions_context(&reply.body) => ProviderError::ContextOverflow {
            estimated: 0,
            limit: 0,
        },
        status => ProviderError::Http {
            status,
            body: reply.body.chars().take(500).collect(),
        },
    }
}

fn mentions_context(body: &str) -> bool {
    let lower = body.to_lowercase();
    lower.contains("context_length_exceeded") || lower.contains("maximum context length")
}

pub(super) fn transport_to_provider(e: TransportError) -> ProviderError {
    match e {
        TransportError::Timeout => ProviderError::Transient("timeout".into()),
        TransportError::Connect(m) => ProviderError::Transient(format!("connection: {m}")),
        TransportError::Other(m) => ProviderError::Http { status: 0, body: m },
    }
}

pub(super) fn api_key(env: &str) -> Option<String> {
    (!env.is_empty())
        .then(|| std::env::var(env).ok())
        .flatten()
        .filter(|k| !k.is_empty())
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpChatProvider {
    config: HttpConfig,
    id: String,
    api_key: Option<String>,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    sleep: Arc<dyn Fn(Duration) + Send + Sync>,
}

impl HttpChatProvider {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: HttpConfig, transport: Arc<dyn HttpTransport>) -> Self {
        let api_key = api_key(&config.api_key_env);
        HttpChatProvider {
            id: format!("http:{}", config.model),
            retry: config.retry_policy(),
            config,
            api_key,
            transport,
            sleep: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_ureq(config: HttpConfig) -> Self {
        let transport = Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_secs)));
        Self::new(config, transport)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleep: Arc<dyn Fn(Duration) + Send + Sync>) -> Self {
        self.retry = retry;
        self.sleep = sleep;
        self
    }

    pub fn request_body(&self, req: &ChatRequest) -> Value {
        let model = if req.model_id.is_empty() {
            &self.config.model
        } else {
            &req.model_id
        };
        json!({
            "model": model,
            "messages": self.config.style.to_messages(req),
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<ChatResponse, ProviderError> {
        let reply = self
            .transport
            .post_json(url, self.api_key.as_deref(), body)
            .map_err(transport_to_provider)?;
        if !(200..300).contains(&reply.status) {
            return Err(classify_status(&reply));
        }
        let parsed: CompletionBody =
            serde_json::from_str(&reply.body).map_err(|e| ProviderError::Decode(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Decode("no message content in choices".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(ChatResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            provider_id: self.id.clone(),
            attempts: 1,
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn context_tokens(&self) -> Option<usize> {
        (self.config.context_tokens > 0).then_some(self.config.context_tokens)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let url = self.config.endpoint("chat/completions");
        let body = self.request_body(req);
        let (mut resp, attempts) = self
            .retry
            .run(self.sleep.as_ref(), |_| self.attempt(&url, &body))?;
        tracing::debug!(attempts, provider = %self.id, "chat completion done");
        resp.attempts = attempts;
        Ok(resp)
    }
}
