//! Blocking clients for OpenAI-compatible chat-completion and embedding
//! endpoints.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, Completion, EmbeddingVector, Embedder, GenParams, ProviderError};
use crate::prompting::ChatMessage;

/// Environment variable holding the provider API key.
pub const API_KEY_ENV: &str = "SYNTHPOST_API_KEY";

/// An API key that never prints.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(ApiKey(k.trim().to_string())),
            _ => Err(ProviderError::Config(format!("set {API_KEY_ENV} or use the mock provider"))),
        }
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Request body of the chat-completion protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(messages: &[ChatMessage], params: &GenParams) -> Self {
        ChatRequest {
            model: params.model_name.clone(),
            messages: messages.to_vec(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
        }
    }
}

/// Request body of the embeddings protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model: String,
    pub input: Vec<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    total_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// Appends request/response pairs to a JSONL audit file. Only bodies are
/// logged; the authorization header never is.
#[derive(Debug)]
pub struct TranscriptLog {
    out: Mutex<BufWriter<File>>,
}

impl TranscriptLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TranscriptLog { out: Mutex::new(BufWriter::new(file)) })
    }

    fn record(&self, endpoint: &str, request: &Value, outcome: &Result<Value, ProviderError>, latency: Duration) {
        let entry = match outcome {
            Ok(response) => json!({ "endpoint": endpoint, "request": request, "response": response, "latency_ms": latency.as_millis() as u64 }),
            Err(e) => json!({ "endpoint": endpoint, "request": request, "error": e.to_string(), "latency_ms": latency.as_millis() as u64 }),
        };
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        let written = writeln!(out, "{entry}").and_then(|_| out.flush());
        if let Err(e) = written {
            log::warn!("transcript write failed: {e}");
        }
    }
}

fn looks_like_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length_exceeded") || lower.contains("maximum context length")
}

/// Client for a base URL such as `https://api.openai.com/v1`.
pub struct HttpProvider {
    base_url: String,
    key: Option<ApiKey>,
    chat_model: String,
    embedding_model: String,
    page_size: usize,
    http: Client,
    transcript: Option<TranscriptLog>,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("key", &self.key)
            .field("chat_model", &self.chat_model)
            .field("embedding_model", &self.embedding_model)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, key: Option<ApiKey>) -> Result<Self, ProviderError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            key,
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-3-large".into(),
            page_size: 100,
            http,
            transcript: None,
        })
    }

    pub fn with_models(mut self, chat: impl Into<String>, embedding: impl Into<String>) -> Self {
        self.chat_model = chat.into();
        self.embedding_model = embedding.into();
        self
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    pub fn with_transcript(mut self, log: TranscriptLog) -> Self {
        self.transcript = Some(log);
        self
    }

    pub fn chat_model(&self) -> &str {
        &self.chat_model
    }

    fn post(&self, endpoint: &str, body: Value) -> Result<Value, ProviderError> {
        let started = Instant::now();
        let outcome = self.send(endpoint, &body);
        if let Some(log) = &self.transcript {
            log.record(endpoint, &body, &outcome, started.elapsed());
        }
        outcome
    }

    fn send(&self, endpoint: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.http.post(format!("{}/{}", self.base_url, endpoint)).json(body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key.expose());
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            if looks_like_overflow(&text) {
                return Err(ProviderError::Overflow(text));
            }
            return Err(ProviderError::Http { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Decode(e.to_string()))
    }
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}#{}", self.base_url, self.chat_model)
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenParams) -> Result<Completion, ProviderError> {
        let started = Instant::now();
        let request = ChatRequest::new(messages, params);
        let body = serde_json::to_value(&request).map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        let raw = self.post("chat/completions", body)?;
        let parsed: ChatResponse = serde_json::from_value(raw).map_err(|e| ProviderError::Decode(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Decode("response has no message content".into()))?;
        Ok(Completion {
            text,
            tokens_used: parsed.usage.and_then(|u| u.total_tokens),
            latency: started.elapsed(),
        })
    }
}

impl Embedder for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}#{}", self.base_url, self.embedding_model)
    }

    fn page_size(&self) -> usize {
        self.page_size
    }

    fn embed_page(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let request = EmbeddingRequest { model: self.embedding_model.clone(), input: texts.to_vec() };
        let body = serde_json::to_value(&request).map_err(|e| ProviderError::InvalidInput(e.to_string()))?;
        let raw = self.post("embeddings", body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(raw).map_err(|e| ProviderError::Decode(e.to_string()))?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        let source = Embedder::id(self);
        Ok(parsed.data.into_iter().map(|d| EmbeddingVector::new(d.embedding, source.clone())).collect())
    }
}
