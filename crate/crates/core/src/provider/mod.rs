//! Chat-completion and embedding providers.
//!
//! Live clients speak the common JSON-over-HTTP chat/embeddings protocol
//! ([`http`]); [`mock`] holds deterministic offline stand-ins. Every call
//! goes through [`retry::throttle_and_retry`].

pub mod http;
pub mod mock;
pub mod retry;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{ChatMessage, PromptSpec};
pub use retry::{throttle_and_retry, RetryPolicy, Retried, Throttle};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    /// The request did not fit the model's context window.
    #[error("context overflow: {0}")]
    Overflow(String),
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("provider not configured: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: Box<ProviderError> },
}

impl ProviderError {
    /// Transport failures, rate limiting and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Whether this error, possibly wrapped in `Exhausted`, is an overflow.
    pub fn is_overflow(&self) -> bool {
        match self {
            ProviderError::Overflow(_) => true,
            ProviderError::Exhausted { last, .. } => last.is_overflow(),
            _ => false,
        }
    }
}

/// Sampling parameters for one chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl GenParams {
    pub fn new(model_name: impl Into<String>, temperature: f64, top_p: f64) -> Result<Self, ProviderError> {
        let params = GenParams { temperature, top_p, model_name: model_name.into(), max_tokens: None };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(ProviderError::InvalidInput(format!("temperature {} outside (0, 2]", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::InvalidInput(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == Some(0) {
            return Err(ProviderError::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Raw completion text plus call accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub tokens_used: Option<u64>,
    pub latency: Duration,
}

pub trait ChatProvider: Send + Sync {
    /// Identifier recorded in run metadata (never includes credentials).
    fn id(&self) -> String;

    fn complete(&self, messages: &[ChatMessage], params: &GenParams) -> Result<Completion, ProviderError>;
}

/// One completion for a few-shot prompt, throttled and retried per `policy`.
pub fn chat_complete(
    provider: &dyn ChatProvider,
    prompt: &PromptSpec,
    params: &GenParams,
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<Retried<Completion>, ProviderError> {
    params.validate()?;
    let messages = prompt.messages();
    throttle_and_retry(policy, throttle, || provider.complete(&messages, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_model: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source_model: impl Into<String>) -> Self {
        EmbeddingVector { values, source_model: source_model.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;

    /// Largest number of texts sent in one request.
    fn page_size(&self) -> usize {
        100
    }

    fn embed_page(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

/// Embeds `texts` page by page, preserving order. A failing page is retried
/// on its own; pages already embedded are kept.
pub fn embed_texts(
    embedder: &dyn Embedder,
    texts: &[String],
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidInput("nothing to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidInput(format!("text {i} is empty")));
    }
    let page_size = embedder.page_size().max(1);
    let mut out = Vec::with_capacity(texts.len());
    for page in texts.chunks(page_size) {
        let vectors = throttle_and_retry(policy, throttle, || embedder.embed_page(page))?.value;
        if vectors.len() != page.len() {
            return Err(ProviderError::Decode(format!(
                "asked for {} embeddings, got {}",
                page.len(),
                vectors.len()
            )));
        }
        out.extend(vectors);
    }
    let dim = out[0].dim();
    if dim == 0 || out.iter().any(|v| v.dim() != dim || !v.is_finite()) {
        return Err(ProviderError::Decode("embeddings are empty, non-finite or of mixed dimension".into()));
    }
    Ok(out)
}
