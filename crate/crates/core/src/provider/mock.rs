//! Deterministic offline providers.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde_json::{json, Value};

use super::{ChatProvider, Completion, EmbeddingVector, Embedder, GenParams, ProviderError};
use crate::prompting::{ChatMessage, Role};
use crate::seeding::{fnv1a_seeded, splitmix64};

fn last_user_message(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str())
}

fn completion(text: String) -> Completion {
    let tokens = text.len().div_ceil(4) as u64;
    Completion { text, tokens_used: Some(tokens), latency: Duration::ZERO }
}

/// Answers generation prompts by echoing the grounding examples back with
/// their words rotated, as a contract-conforming JSON array. Output depends
/// only on the prompt text.
#[derive(Debug, Default)]
pub struct EchoChat;

impl EchoChat {
    fn requested_count(prompt: &str) -> usize {
        static COUNT: OnceLock<Regex> = OnceLock::new();
        COUNT
            .get_or_init(|| Regex::new(r"exactly (\d+) object").expect("count pattern"))
            .captures(prompt)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(0)
    }

    fn examples(prompt: &str) -> Vec<String> {
        static EXAMPLE: OnceLock<Regex> = OnceLock::new();
        EXAMPLE
            .get_or_init(|| Regex::new(r"(?s)Example \d+:\n(.*?)\n\n").expect("example pattern"))
            .captures_iter(prompt)
            .map(|c| c[1].to_string())
            .collect()
    }

    fn rotate_words(text: &str, by: usize) -> String {
        let mut words: Vec<&str> = text.split_whitespace().collect();
        if !words.is_empty() {
            let n = words.len();
            words.rotate_left(by % n);
        }
        words.join(" ")
    }

    pub fn respond(prompt: &str) -> String {
        let count = Self::requested_count(prompt);
        let examples = Self::examples(prompt);
        let posts: Vec<Value> = (0..count)
            .map(|i| {
                let text = match examples.get(i % examples.len().max(1)) {
                    Some(src) => Self::rotate_words(src, i + 1),
                    None => format!("generated post {}", i + 1),
                };
                json!({ "text": text })
            })
            .collect();
        Value::Array(posts).to_string()
    }
}

impl ChatProvider for EchoChat {
    fn id(&self) -> String {
        "mock:echo".into()
    }

    fn complete(&self, messages: &[ChatMessage], _params: &GenParams) -> Result<Completion, ProviderError> {
        Ok(completion(EchoChat::respond(last_user_message(messages))))
    }
}

/// Replays a fixed script of responses, then a fallback (or a transport
/// error when there is none). Records the start time of every call.
#[derive(Debug)]
pub struct ScriptedChat {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    fallback: Option<String>,
    calls: Mutex<Vec<Instant>>,
}

impl ScriptedChat {
    pub fn new(script: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        ScriptedChat { script: Mutex::new(script.into_iter().collect()), fallback: None, calls: Mutex::new(Vec::new()) }
    }

    /// Always answers `response`.
    pub fn always(response: impl Into<String>) -> Self {
        ScriptedChat::new([]).with_fallback(response)
    }

    pub fn with_fallback(mut self, response: impl Into<String>) -> Self {
        self.fallback = Some(response.into());
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn call_times(&self) -> Vec<Instant> {
        self.calls.lock().unwrap().clone()
    }
}

impl ChatProvider for ScriptedChat {
    fn id(&self) -> String {
        "mock:scripted".into()
    }

    fn complete(&self, _messages: &[ChatMessage], _params: &GenParams) -> Result<Completion, ProviderError> {
        self.calls.lock().unwrap().push(Instant::now());
        let next = self.script.lock().unwrap().pop_front();
        match next {
            Some(step) => step.map(completion),
            None => self
                .fallback
                .clone()
                .map(completion)
                .ok_or_else(|| ProviderError::Transport("script exhausted".into())),
        }
    }
}

/// Names a topic from the first two words of its keyword list, title-cased.
#[derive(Debug, Default)]
pub struct KeywordNamer;

impl ChatProvider for KeywordNamer {
    fn id(&self) -> String {
        "mock:keyword-namer".into()
    }

    fn complete(&self, messages: &[ChatMessage], _params: &GenParams) -> Result<Completion, ProviderError> {
        let prompt = last_user_message(messages);
        let words = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Keywords:"))
            .ok_or_else(|| ProviderError::InvalidInput("no keyword line".into()))?;
        let name: Vec<String> = words
            .split(',')
            .map(|w| w.trim().trim_start_matches(['#', '@']))
            .filter(|w| !w.is_empty())
            .take(2)
            .map(|w| {
                let mut chars = w.chars();
                chars.next().map_or_else(String::new, |c| c.to_uppercase().chain(chars).collect())
            })
            .collect();
        Ok(completion(name.join(" ")))
    }
}

/// Embeds text as a signed bag of hashed character trigrams, L2-normalised.
///
/// The text is lowercased and padded with one space on each side. Each
/// trigram's seeded FNV-1a hash picks a bucket (`hash % dim`) and a sign
/// (top bit).
#[derive(Debug)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    page_size: usize,
    pages: AtomicUsize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(64, 0)
    }
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0);
        HashEmbedder { dim, seed, page_size: 100, pages: AtomicUsize::new(0) }
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    /// Pages served so far.
    pub fn pages_served(&self) -> usize {
        self.pages.load(Ordering::Relaxed)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidInput("cannot embed empty text".into()));
        }
        let padded: Vec<char> = format!(" {} ", text.trim().to_lowercase()).chars().collect();
        let state = splitmix64(self.seed);
        let mut values = vec![0.0f64; self.dim];
        let mut buf = [0u8; 12];
        for gram in padded.windows(3) {
            let mut len = 0;
            for c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a_seeded(state, &buf[..len]);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[(h % self.dim as u64) as usize] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every trigram cancelled out; fall back to a fixed axis
            values[(state % self.dim as u64) as usize] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector::new(values, self.id()))
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("stub:hash-trigram-{}d-seed{}", self.dim, self.seed)
    }

    fn page_size(&self) -> usize {
        self.page_size
    }

    fn embed_page(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.pages.fetch_add(1, Ordering::Relaxed);
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}
