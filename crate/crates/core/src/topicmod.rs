//! Topics from embedding clusters, represented by class-based TF-IDF words,
//! and overlap between topic sets.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_indices, Corpus};
use crate::embedsim::{check_uniform, cosine, kmeans, vectors_of, EmbedSimError, KMeansConfig};
use crate::provider::{embed_texts, throttle_and_retry, ChatProvider, EmbeddingVector, Embedder, GenParams, ProviderError, RetryPolicy, Throttle};
use crate::prompting::ChatMessage;
use crate::textlex::strip_urls;

pub const TOP_WORDS: usize = 10;
const STOPWORDS: &str = include_str!("../assets/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("{posts} posts but {embeddings} embeddings")]
    CountMismatch { posts: usize, embeddings: usize },
    #[error("min_topic_size must be at least 2, got {0}")]
    MinSizeTooSmall(usize),
    #[error("class has an empty vocabulary")]
    EmptyVocabulary,
    #[error("topic set is empty")]
    EmptyTopicSet,
    #[error("topic has no top words")]
    NoTopWords,
    #[error(transparent)]
    Geometry(#[from] EmbedSimError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word.to_lowercase().replace('\u{2019}', "'").as_str())
}

/// Trims ASCII punctuation around a token, keeping a leading `#` or `@`.
fn trim_token(token: &str) -> String {
    let token = token.trim_start_matches(|c: char| c.is_ascii_punctuation() && c != '#' && c != '@');
    let (prefix, body) = match token.chars().next() {
        Some(c @ ('#' | '@')) => (Some(c), &token[1..]),
        _ => (None, token),
    };
    let body = body.trim_matches(|c: char| c.is_ascii_punctuation());
    match prefix {
        _ if body.is_empty() => String::new(),
        Some(c) => format!("{c}{body}"),
        None => body.to_string(),
    }
}

/// Removes URLs and stop words; hashtags, user tags and emojis stay.
pub fn clean_for_topics(text: &str) -> String {
    strip_urls(text)
        .split_whitespace()
        .map(trim_token)
        .filter(|t| !t.is_empty() && (t.starts_with(['#', '@']) || !is_stopword(t)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased whitespace tokens of cleaned text.
pub fn topic_tokens(cleaned: &str) -> Vec<String> {
    cleaned.split_whitespace().map(str::to_lowercase).collect()
}

/// c-TF-IDF weights per class: `tf(w, c) * ln(1 + A / f(w))`, where `A` is
/// the mean number of tokens per class and `f(w)` the frequency of `w` over
/// all classes.
pub fn ctfidf_weights(classes: &[Vec<String>]) -> Vec<BTreeMap<String, f64>> {
    let mut tf: Vec<BTreeMap<&str, u64>> = Vec::with_capacity(classes.len());
    let mut total: BTreeMap<&str, u64> = BTreeMap::new();
    for class in classes {
        let mut counts = BTreeMap::new();
        for w in class {
            *counts.entry(w.as_str()).or_insert(0) += 1;
            *total.entry(w.as_str()).or_insert(0) += 1;
        }
        tf.push(counts);
    }
    let tokens: usize = classes.iter().map(Vec::len).sum();
    let avg = tokens as f64 / classes.len().max(1) as f64;
    tf.into_iter()
        .map(|counts| {
            counts
                .into_iter()
                .map(|(w, c)| (w.to_string(), c as f64 * (1.0 + avg / total[w] as f64).ln()))
                .collect()
        })
        .collect()
}

/// Top `n` words of class `class`, by descending weight then alphabetically.
pub fn ctfidf_top_words(classes: &[Vec<String>], class: usize, n: usize) -> Result<Vec<String>, TopicError> {
    let weights = ctfidf_weights(classes);
    let words = weights.get(class).ok_or(TopicError::EmptyVocabulary)?;
    if words.is_empty() {
        return Err(TopicError::EmptyVocabulary);
    }
    Ok(rank(words, n))
}

fn rank(weights: &BTreeMap<String, f64>, n: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = weights.iter().map(|(w, &v)| (w, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(w, _)| w.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: usize,
    pub size: usize,
    pub top_words: Vec<String>,
    #[serde(default)]
    pub name: Option<String>,
    pub member_post_ids: Vec<String>,
}

impl Topic {
    /// The text embedded for overlap: top words joined by spaces.
    pub fn signature(&self) -> String {
        self.top_words.join(" ")
    }

    pub fn label(&self) -> String {
        match &self.name {
            Some(name) => format!("{}: {}", self.id, name),
            None => format!("{}: {}", self.id, self.top_words.iter().take(3).cloned().collect::<Vec<_>>().join(" ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    pub min_topic_size: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Mean silhouette a split must reach to beat a single topic.
    pub min_silhouette: f64,
    pub silhouette_sample: usize,
    /// Upper bound on the k scan, on top of `ceil(n / min_topic_size)`.
    #[serde(default)]
    pub max_k: Option<usize>,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig { min_topic_size: 10, seed: 0, restarts: 10, min_silhouette: 0.25, silhouette_sample: 1000, max_k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub topics: Vec<Topic>,
    pub outlier_post_ids: Vec<String>,
    /// Clusters formed before small ones were dropped (0 when the corpus is
    /// smaller than `min_topic_size`).
    pub k: usize,
    pub silhouette: Option<f64>,
}

impl TopicModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topic model serialises")
    }
}

/// Mean silhouette over `sample` (indices into `points`), using Euclidean
/// distances to sampled points only.
pub fn mean_silhouette(points: &[Vec<f64>], assignments: &[usize], sample: &[usize]) -> f64 {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for &i in sample {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for &j in sample {
            if i != j {
                let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sums[assignments[j]] += d;
                counts[assignments[j]] += 1;
            }
        }
        let own = assignments[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / sample.len().max(1) as f64
}

/// Clusters the embeddings with k-means, drops clusters below the minimum
/// size into the outlier bucket and describes each surviving cluster by its
/// c-TF-IDF top words.
///
/// k is scanned over `2..=ceil(n / min_topic_size)`; the best mean
/// silhouette wins if it reaches `min_silhouette`, otherwise all posts form
/// one cluster. A corpus smaller than `min_topic_size` yields no topics.
pub fn extract_topics(corpus: &Corpus, embeddings: &[EmbeddingVector], config: &TopicConfig) -> Result<TopicModel, TopicError> {
    let n = corpus.len();
    if embeddings.len() != n {
        return Err(TopicError::CountMismatch { posts: n, embeddings: embeddings.len() });
    }
    if config.min_topic_size < 2 {
        return Err(TopicError::MinSizeTooSmall(config.min_topic_size));
    }
    let ids: Vec<String> = corpus.posts.iter().map(|p| p.id.clone()).collect();
    if n < config.min_topic_size {
        return Ok(TopicModel { topics: Vec::new(), outlier_post_ids: ids, k: 0, silhouette: None });
    }
    let points = vectors_of(embeddings);
    check_uniform(&points)?;

    let sample = if n > config.silhouette_sample {
        let mut s = sample_indices(n, config.silhouette_sample, config.seed);
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let mut k_max = n.div_ceil(config.min_topic_size).min(n - 1);
    if let Some(cap) = config.max_k {
        k_max = k_max.min(cap);
    }
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for k in 2..=k_max {
        let run = kmeans(&points, &KMeansConfig::new(k, config.seed).with_restarts(config.restarts))?;
        let s = mean_silhouette(&points, &run.assignments, &sample);
        log::debug!("k={k} silhouette={s:.4}");
        if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
            best = Some((k, s, run.assignments));
        }
    }
    let (k, silhouette, assignments) = match best {
        Some((k, s, a)) if s >= config.min_silhouette => (k, Some(s), a),
        other => (1, other.map(|(_, s, _)| s), vec![0; n]),
    };

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let (mut kept, dropped): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
        members.into_iter().filter(|m| !m.is_empty()).partition(|m| m.len() >= config.min_topic_size);
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut outliers: Vec<usize> = dropped.into_iter().flatten().collect();
    outliers.sort_unstable();

    let tokens_of = |idx: &[usize]| -> Vec<String> {
        idx.iter().flat_map(|&i| topic_tokens(&clean_for_topics(&corpus.posts[i].text))).collect()
    };
    let mut classes: Vec<Vec<String>> = kept.iter().map(|m| tokens_of(m)).collect();
    if !outliers.is_empty() {
        classes.push(tokens_of(&outliers));
    }
    let weights = ctfidf_weights(&classes);

    let topics = kept
        .iter()
        .enumerate()
        .map(|(id, m)| Topic {
            id,
            size: m.len(),
            top_words: rank(&weights[id], TOP_WORDS),
            name: None,
            member_post_ids: m.iter().map(|&i| ids[i].clone()).collect(),
        })
        .collect();
    Ok(TopicModel { topics, outlier_post_ids: outliers.into_iter().map(|i| ids[i].clone()).collect(), k, silhouette })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub axes: (String, String),
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub similarity: Vec<Vec<f64>>,
    pub threshold: f64,
    pub shared_pairs: Vec<(usize, usize)>,
    /// Topics on each axis with no partner at or above the threshold.
    pub disjoint_counts: (usize, usize),
}

impl OverlapMatrix {
    pub fn from_similarity(
        axes: (String, String),
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        similarity: Vec<Vec<f64>>,
        threshold: f64,
    ) -> Self {
        let mut shared_pairs = Vec::new();
        for (i, row) in similarity.iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                if s >= threshold {
                    shared_pairs.push((i, j));
                }
            }
        }
        let rows_matched: HashSet<usize> = shared_pairs.iter().map(|p| p.0).collect();
        let cols_matched: HashSet<usize> = shared_pairs.iter().map(|p| p.1).collect();
        let disjoint_counts = (row_labels.len() - rows_matched.len(), col_labels.len() - cols_matched.len());
        OverlapMatrix { axes, row_labels, col_labels, similarity, threshold, shared_pairs, disjoint_counts }
    }

    /// Same matrix with the axes swapped.
    pub fn transposed(&self) -> Self {
        let cols = self.col_labels.len();
        let similarity = (0..cols).map(|j| self.similarity.iter().map(|row| row[j]).collect()).collect();
        OverlapMatrix::from_similarity(
            (self.axes.1.clone(), self.axes.0.clone()),
            self.col_labels.clone(),
            self.row_labels.clone(),
            similarity,
            self.threshold,
        )
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = quote(&format!("{} \\ {}", self.axes.0, self.axes.1));
        for c in &self.col_labels {
            out.push(',');
            out.push_str(&quote(c));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.similarity) {
            out.push_str(&quote(label));
            for s in row {
                let _ = write!(out, ",{s:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Embeds each topic's joined top words and pairs topics whose cosine
/// similarity reaches `threshold`.
pub fn topic_overlap(
    a: &[Topic],
    b: &[Topic],
    embedder: &dyn Embedder,
    threshold: f64,
    axes: (&str, &str),
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<OverlapMatrix, TopicError> {
    if a.is_empty() || b.is_empty() {
        return Err(TopicError::EmptyTopicSet);
    }
    if a.iter().chain(b).any(|t| t.top_words.is_empty()) {
        return Err(TopicError::NoTopWords);
    }
    let texts: Vec<String> = a.iter().chain(b).map(Topic::signature).collect();
    let vectors = vectors_of(&embed_texts(embedder, &texts, policy, throttle)?);
    let (va, vb) = vectors.split_at(a.len());
    let similarity = va.iter().map(|x| vb.iter().map(|y| cosine(x, y)).collect()).collect();
    Ok(OverlapMatrix::from_similarity(
        (axes.0.to_string(), axes.1.to_string()),
        a.iter().map(Topic::label).collect(),
        b.iter().map(Topic::label).collect(),
        similarity,
        threshold,
    ))
}

/// The naming prompt: the ten words only, no example posts.
pub fn naming_messages(topic: &Topic) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system("You name topics found in social media posts."),
        ChatMessage::user(format!(
            "Give a short name (two to four words) for the topic described by these keywords.\nKeywords: {}\nAnswer with the name only.",
            topic.top_words.join(", ")
        )),
    ]
}

/// Asks the provider for a one-line topic name and stores it. On failure
/// the topic keeps no name and the error is returned for reporting.
pub fn label_topic(
    topic: &mut Topic,
    provider: &dyn ChatProvider,
    params: &GenParams,
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<String, TopicError> {
    if topic.top_words.is_empty() {
        return Err(TopicError::NoTopWords);
    }
    let messages = naming_messages(topic);
    let reply = throttle_and_retry(policy, throttle, || provider.complete(&messages, params))?.value.text;
    let name = reply
        .lines()
        .map(|l| l.trim().trim_matches(['"', '\'', '*']).trim())
        .find(|l| !l.is_empty())
        .ok_or_else(|| TopicError::Provider(ProviderError::Decode("empty topic name".into())))?
        .to_string();
    topic.name = Some(name.clone());
    Ok(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Platform, Post};
    use crate::provider::mock::{HashEmbedder, KeywordNamer, ScriptedChat};
    use std::time::Duration;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn quick() -> (RetryPolicy, Throttle) {
        (RetryPolicy::immediate(0), Throttle::new(Duration::ZERO))
    }

    #[test]
    fn cleaning() {
        assert_eq!(clean_for_topics("the vote at https://x.y is in"), "vote");
        assert_eq!(clean_for_topics("#cardigan 💛"), "#cardigan 💛");
        assert_eq!(clean_for_topics(""), "");
        assert_eq!(clean_for_topics("Vote, today! (#Election2024)"), "Vote today #Election2024");
        assert_eq!(clean_for_topics("#the @you"), "#the @you");
    }

    #[test]
    fn ctfidf_hand_computed() {
        let classes = vec![words("a a b"), words("b c c")];
        assert_eq!(ctfidf_top_words(&classes, 1, 10).unwrap(), ["c", "b"]);
        let w = ctfidf_weights(&classes);
        assert!((w[1]["c"] - 2.0 * 2.5f64.ln()).abs() < 1e-15);
        // one class: log term is constant, so term frequency decides
        assert_eq!(ctfidf_top_words(&[words("x y y z z z")], 0, 10).unwrap(), ["z", "y", "x"]);
        assert_eq!(ctfidf_top_words(&[words("d c b a")], 0, 10).unwrap().len(), 4);
        assert!(matches!(ctfidf_top_words(&[vec![]], 0, 10), Err(TopicError::EmptyVocabulary)));
    }

    fn corpus(texts: &[String]) -> Corpus {
        Corpus::new(texts.iter().enumerate().map(|(i, t)| Post::real(format!("p{i}"), Platform::Reddit, t.clone())).collect())
    }

    #[test]
    fn small_corpus_is_all_outliers() {
        let texts = vec!["same words here".to_string(); 9];
        let e = HashEmbedder::default();
        let emb: Vec<_> = texts.iter().map(|t| e.embed_one(t).unwrap()).collect();
        let model = extract_topics(&corpus(&texts), &emb, &TopicConfig::default()).unwrap();
        assert!(model.topics.is_empty());
        assert_eq!(model.outlier_post_ids.len(), 9);
    }

    #[test]
    fn single_blob_is_one_topic() {
        let texts: Vec<String> = (0..15).map(|i| format!("garden tomato harvest day{i}")).collect();
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::seeding::rng_from_seed(5);
        let emb: Vec<_> = (0..15)
            .map(|_| {
                let v: Vec<f64> = (0..32).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 + 0.1 * z }).collect();
                EmbeddingVector::new(v, "t")
            })
            .collect();
        let model = extract_topics(&corpus(&texts), &emb, &TopicConfig::default()).unwrap();
        assert_eq!(model.topics.len(), 1);
        assert_eq!(model.topics[0].size, 15);
        let vocab: HashSet<String> = texts.iter().flat_map(|t| topic_tokens(&clean_for_topics(t))).collect();
        assert!(model.topics[0].top_words.iter().all(|w| vocab.contains(w)));
        assert_eq!(model.topics[0].top_words.len(), 10);
        assert_eq!(&model.topics[0].top_words[..3], ["garden", "harvest", "tomato"]);
    }

    #[test]
    fn count_mismatch() {
        let texts = vec!["a".to_string(); 3];
        assert!(matches!(
            extract_topics(&corpus(&texts), &[], &TopicConfig::default()),
            Err(TopicError::CountMismatch { .. })
        ));
    }

    fn topic(id: usize, w: &str) -> Topic {
        Topic { id, size: 10, top_words: words(w), name: None, member_post_ids: vec![] }
    }

    #[test]
    fn identical_lists_always_shared() {
        let (p, t) = quick();
        let a = [topic(0, "vote ballot election"), topic(1, "cat dog")];
        let b = [topic(0, "vote ballot election")];
        let m = topic_overlap(&a, &b, &HashEmbedder::default(), 1.0, ("A", "B"), &p, &t).unwrap();
        assert_eq!(m.similarity[0][0], 1.0);
        assert!(m.shared_pairs.contains(&(0, 0)));
        let none = topic_overlap(&a, &b, &HashEmbedder::default(), 1.0 + 1e-9, ("A", "B"), &p, &t).unwrap();
        assert!(none.shared_pairs.is_empty());
        assert_eq!(none.disjoint_counts, (2, 1));
        let swapped = m.transposed();
        assert_eq!(swapped.shared_pairs.len(), m.shared_pairs.len());
        assert_eq!(swapped.disjoint_counts, (m.disjoint_counts.1, m.disjoint_counts.0));
    }

    #[test]
    fn naming() {
        let (p, t) = quick();
        let params = GenParams::new("mock", 1.0, 1.0).unwrap();
        let mut tp = topic(0, "voter engagement turnout");
        assert_eq!(label_topic(&mut tp, &KeywordNamer, &params, &p, &t).unwrap(), "Voter Engagement");
        assert_eq!(tp.name.as_deref(), Some("Voter Engagement"));
        let mut failing = topic(1, "x y");
        assert!(label_topic(&mut failing, &ScriptedChat::new([]), &params, &p, &t).is_err());
        assert_eq!(failing.name, None);
        let mut empty = topic(2, "");
        assert!(matches!(label_topic(&mut empty, &KeywordNamer, &params, &p, &t), Err(TopicError::NoTopWords)));
    }
}
