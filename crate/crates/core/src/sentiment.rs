//! Three-way sentiment labels and per-corpus distributions.
//!
//! The built-in classifier is a valence-lexicon scorer. A remote backend
//! can serve any model behind `POST {text} -> {label, scores}`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::RwLock;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::textlex::{strip_urls, tokenize, Family};

const BUILTIN_LEXICON: &str = include_str!("../assets/valence.tsv");

/// Tokens that flip the valence of the next few tokens.
const NEGATORS: &[&str] = &[
    "not", "no", "never", "nobody", "nothing", "neither", "nor", "none", "nowhere", "without", "cannot", "aint",
];
const NEGATION_WINDOW: usize = 3;
/// Normalisation constant in `score / sqrt(score^2 + ALPHA)`.
const ALPHA: f64 = 15.0;
pub const POSITIVE_THRESHOLD: f64 = 0.05;
pub const NEGATIVE_THRESHOLD: f64 = -0.05;

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("cannot compute a distribution over an empty corpus")]
    EmptyCorpus,
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("remote classifier: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [SentimentLabel::Negative, SentimentLabel::Neutral, SentimentLabel::Positive];

    pub fn from_compound(score: f64) -> Self {
        if score > POSITIVE_THRESHOLD {
            SentimentLabel::Positive
        } else if score < NEGATIVE_THRESHOLD {
            SentimentLabel::Negative
        } else {
            SentimentLabel::Neutral
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
        })
    }
}

pub trait Classifier: Send + Sync {
    /// Stable identifier; labels are cached under it.
    fn id(&self) -> String;

    fn classify(&self, text: &str) -> Result<SentimentLabel, SentimentError>;
}

/// Sums token valences (negated when a negator appears among the previous
/// three tokens), squashes the sum to (-1, 1) and thresholds at ±0.05.
/// URLs are stripped first; hashtags are scored by their word and emojis by
/// their own lexicon entries.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    valences: HashMap<String, f64>,
    digest: String,
}

impl LexiconClassifier {
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_LEXICON).expect("bundled lexicon parses")
    }

    /// Parses `token<TAB>valence` lines; `#` lines and blanks are skipped.
    pub fn from_tsv(source: &str) -> Result<Self, SentimentError> {
        let mut valences = HashMap::new();
        for (idx, line) in source.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("# ") || trimmed == "#" {
                continue;
            }
            let err = |reason: &str| SentimentError::Lexicon { line: idx + 1, reason: reason.to_string() };
            let (token, value) = trimmed.split_once('\t').ok_or_else(|| err("expected token<TAB>valence"))?;
            let value: f64 = value.trim().parse().map_err(|_| err("valence is not a number"))?;
            if !value.is_finite() {
                return Err(err("valence must be finite"));
            }
            valences.insert(token.trim().to_lowercase(), value);
        }
        let digest = hex::encode(Sha256::digest(source.as_bytes()));
        Ok(LexiconClassifier { valences, digest: digest[..12].to_string() })
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }

    /// Tokens as scored: lowercase words with surrounding punctuation and a
    /// leading `#` removed, and each emoji cluster on its own.
    pub fn tokens(text: &str) -> Vec<String> {
        let cleaned = strip_urls(text);
        let mut out = Vec::new();
        for piece in cleaned.split_whitespace() {
            let emojis: Vec<_> = tokenize(piece).into_iter().filter(|t| t.family == Family::Emoji).collect();
            let mut rest = String::with_capacity(piece.len());
            let mut cursor = 0;
            for e in &emojis {
                rest.push_str(&piece[cursor..e.start]);
                rest.push(' ');
                cursor = e.end;
            }
            rest.push_str(&piece[cursor..]);
            for word in rest.split_whitespace() {
                let word = word
                    .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                    .trim_matches('\'')
                    .to_lowercase();
                if !word.is_empty() {
                    out.push(word);
                }
            }
            out.extend(emojis.iter().map(|e| e.text.to_string()));
        }
        out
    }

    fn is_negator(token: &str) -> bool {
        NEGATORS.contains(&token) || token.ends_with("n't")
    }

    /// Raw valence sum after negation handling.
    pub fn raw_score(&self, text: &str) -> f64 {
        let tokens = Self::tokens(text);
        tokens
            .iter()
            .enumerate()
            .filter_map(|(i, tok)| {
                let v = self.valence(tok)?;
                let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i].iter().any(|t| Self::is_negator(t));
                Some(if negated { -v } else { v })
            })
            .sum()
    }

    /// Raw score squashed into (-1, 1).
    pub fn compound(&self, text: &str) -> f64 {
        let s = self.raw_score(text);
        s / (s * s + ALPHA).sqrt()
    }
}

impl Classifier for LexiconClassifier {
    fn id(&self) -> String {
        format!("lexicon-v1:{}:url-stripped", self.digest)
    }

    fn classify(&self, text: &str) -> Result<SentimentLabel, SentimentError> {
        Ok(SentimentLabel::from_compound(self.compound(text)))
    }
}

#[derive(Debug, Serialize)]
struct RemoteRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    label: String,
    #[serde(default)]
    #[allow(dead_code)]
    scores: Option<BTreeMap<String, f64>>,
}

/// Classifier served over HTTP: `POST url {"text": ...}` answering
/// `{"label": "positive"|"neutral"|"negative", "scores": {...}}`.
#[derive(Debug)]
pub struct RemoteClassifier {
    url: String,
    model_id: String,
    http: reqwest::blocking::Client,
}

impl RemoteClassifier {
    pub fn new(url: impl Into<String>, model_id: impl Into<String>) -> Result<Self, SentimentError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| SentimentError::Remote(e.to_string()))?;
        Ok(RemoteClassifier { url: url.into(), model_id: model_id.into(), http })
    }

    fn parse_label(label: &str) -> Result<SentimentLabel, SentimentError> {
        match label.trim().to_ascii_lowercase().as_str() {
            "negative" | "neg" => Ok(SentimentLabel::Negative),
            "neutral" | "neu" => Ok(SentimentLabel::Neutral),
            "positive" | "pos" => Ok(SentimentLabel::Positive),
            other => Err(SentimentError::Remote(format!("unknown label {other:?}"))),
        }
    }
}

impl Classifier for RemoteClassifier {
    fn id(&self) -> String {
        format!("remote:{}:url-stripped", self.model_id)
    }

    fn classify(&self, text: &str) -> Result<SentimentLabel, SentimentError> {
        let cleaned = strip_urls(text);
        let resp = self
            .http
            .post(&self.url)
            .json(&RemoteRequest { text: &cleaned })
            .send()
            .map_err(|e| SentimentError::Remote(e.without_url().to_string()))?;
        if !resp.status().is_success() {
            return Err(SentimentError::Remote(format!("HTTP {}", resp.status().as_u16())));
        }
        let body: RemoteResponse = resp.json().map_err(|e| SentimentError::Remote(e.without_url().to_string()))?;
        Self::parse_label(&body.label)
    }
}

/// Labels keyed by (classifier id, SHA-256 of the text).
#[derive(Debug, Default)]
pub struct LabelCache {
    labels: RwLock<HashMap<(String, [u8; 32]), SentimentLabel>>,
}

impl LabelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(classifier_id: &str, text: &str) -> (String, [u8; 32]) {
        (classifier_id.to_string(), Sha256::digest(text.as_bytes()).into())
    }

    pub fn classify(&self, classifier: &dyn Classifier, classifier_id: &str, text: &str) -> Result<SentimentLabel, SentimentError> {
        let key = Self::key(classifier_id, text);
        if let Some(label) = self.labels.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(*label);
        }
        let label = classifier.classify(text)?;
        self.labels.write().unwrap_or_else(|e| e.into_inner()).insert(key, label);
        Ok(label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentDistribution {
    pub negative_pct: f64,
    pub neutral_pct: f64,
    pub positive_pct: f64,
    pub n: usize,
    pub counts: BTreeMap<SentimentLabel, usize>,
    pub classifier_id: String,
}

impl SentimentDistribution {
    pub fn pct(&self, label: SentimentLabel) -> f64 {
        match label {
            SentimentLabel::Negative => self.negative_pct,
            SentimentLabel::Neutral => self.neutral_pct,
            SentimentLabel::Positive => self.positive_pct,
        }
    }
}

/// Share of posts per label, in percent.
pub fn distribution(
    corpus: &Corpus,
    classifier: &dyn Classifier,
    cache: Option<&LabelCache>,
) -> Result<SentimentDistribution, SentimentError> {
    if corpus.is_empty() {
        return Err(SentimentError::EmptyCorpus);
    }
    let classifier_id = classifier.id();
    let labels: Vec<SentimentLabel> = corpus
        .posts
        .par_iter()
        .map(|post| match cache {
            Some(cache) => cache.classify(classifier, &classifier_id, &post.text),
            None => classifier.classify(&post.text),
        })
        .collect::<Result<_, _>>()?;

    let mut counts: BTreeMap<SentimentLabel, usize> = SentimentLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for label in labels {
        *counts.get_mut(&label).expect("all labels present") += 1;
    }
    let n = corpus.len();
    let pct = |l| 100.0 * counts[&l] as f64 / n as f64;
    Ok(SentimentDistribution {
        negative_pct: pct(SentimentLabel::Negative),
        neutral_pct: pct(SentimentLabel::Neutral),
        positive_pct: pct(SentimentLabel::Positive),
        n,
        counts,
        classifier_id,
    })
}
