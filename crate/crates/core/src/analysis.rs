//! Runs the four fidelity analyses over a set of labelled corpora.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Platform, Post, ScenarioTag, StrategyKind, DEFAULT_GRID};
use crate::embedsim::{pairwise_similarity, vectors_of, EmbedSimError, PairMode};
use crate::provider::{embed_texts, ChatProvider, EmbeddingVector, Embedder, GenParams, ProviderError, RetryPolicy, Throttle};
use crate::sentiment::{distribution, Classifier, LabelCache, SentimentError};
use crate::textlex::{profile_corpus, Family, LexError};
use crate::topicmod::{extract_topics, label_topic, topic_overlap, TopicConfig, TopicError, TopicModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no corpora to analyse")]
    Empty,
    #[error(transparent)]
    Lexical(#[from] LexError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Topics(#[from] TopicError),
    #[error(transparent)]
    Similarity(#[from] EmbedSimError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One corpus of a single platform and scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub platform: Platform,
    pub scenario: ScenarioTag,
    pub corpus: Corpus,
}

impl LabeledCorpus {
    pub fn label(&self) -> String {
        self.scenario.label()
    }

    pub fn display(&self) -> String {
        format!("{} {}", self.platform, self.label())
    }
}

/// Corpora grouped by (platform, scenario) in report order: known platforms
/// first in their fixed order, real before synthetic, agnostic before aware,
/// grid points in default-grid order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSet {
    pub entries: Vec<LabeledCorpus>,
}

fn platform_rank(p: &Platform) -> (usize, String) {
    match Platform::KNOWN.iter().position(|k| k == p) {
        Some(i) => (i, String::new()),
        None => (Platform::KNOWN.len(), p.name().to_string()),
    }
}

fn scenario_rank(s: &ScenarioTag) -> (u8, u8, usize, u64, u64) {
    if s.is_real() {
        return (0, 0, 0, 0, 0);
    }
    let strategy = match s.strategy {
        Some(StrategyKind::Agnostic) => 0,
        _ => 1,
    };
    let (t, p) = (s.temperature.unwrap_or(0.0), s.top_p.unwrap_or(0.0));
    let grid = DEFAULT_GRID.iter().position(|&g| g == (t, p)).unwrap_or(DEFAULT_GRID.len());
    (1, strategy, grid, t.to_bits(), p.to_bits())
}

impl CorpusSet {
    pub fn from_posts(posts: impl IntoIterator<Item = Post>) -> Self {
        let mut groups: Vec<LabeledCorpus> = Vec::new();
        for post in posts {
            match groups.iter_mut().find(|g| g.platform == post.platform && g.scenario == post.scenario) {
                Some(g) => g.corpus.posts.push(post),
                None => groups.push(LabeledCorpus {
                    platform: post.platform.clone(),
                    scenario: post.scenario.clone(),
                    corpus: Corpus::new(vec![post]),
                }),
            }
        }
        groups.sort_by(|a, b| {
            platform_rank(&a.platform)
                .cmp(&platform_rank(&b.platform))
                .then(scenario_rank(&a.scenario).cmp(&scenario_rank(&b.scenario)))
        });
        CorpusSet { entries: groups }
    }

    pub fn platforms(&self) -> Vec<Platform> {
        let mut out: Vec<Platform> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.platform) {
                out.push(e.platform.clone());
            }
        }
        out
    }

    pub fn real(&self, platform: &Platform) -> Option<usize> {
        self.entries.iter().position(|e| &e.platform == platform && e.scenario.is_real())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalCell {
    pub total: u64,
    pub mean: f64,
    pub distinct: usize,
}

impl LexicalCell {
    pub fn render(&self) -> String {
        format!("{:.2} ({})", self.mean, self.distinct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalRow {
    pub scenario: String,
    pub posts: usize,
    pub cells: BTreeMap<Family, LexicalCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalTable {
    pub platform: String,
    pub rows: Vec<LexicalRow>,
}

pub fn lexical_section(set: &CorpusSet) -> Result<Vec<LexicalTable>, AnalysisError> {
    if set.entries.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut tables: Vec<LexicalTable> = Vec::new();
    for entry in &set.entries {
        let profile = profile_corpus(&entry.corpus)?;
        let row = LexicalRow {
            scenario: entry.label(),
            posts: profile.post_count,
            cells: profile
                .families
                .iter()
                .map(|(&f, s)| (f, LexicalCell { total: s.total, mean: s.mean_per_post, distinct: s.distinct_count }))
                .collect(),
        };
        match tables.iter_mut().find(|t| t.platform == entry.platform.name()) {
            Some(t) => t.rows.push(row),
            None => tables.push(LexicalTable { platform: entry.platform.name().to_string(), rows: vec![row] }),
        }
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentRow {
    pub platform: String,
    pub scenario: String,
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentSection {
    pub classifier_id: String,
    pub rows: Vec<SentimentRow>,
}

pub fn sentiment_section(set: &CorpusSet, classifier: &dyn Classifier) -> Result<SentimentSection, AnalysisError> {
    if set.entries.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let cache = LabelCache::new();
    let rows = set
        .entries
        .iter()
        .map(|e| {
            let d = distribution(&e.corpus, classifier, Some(&cache))?;
            Ok(SentimentRow {
                platform: e.platform.name().to_string(),
                scenario: e.label(),
                negative: d.negative_pct,
                neutral: d.neutral_pct,
                positive: d.positive_pct,
                n: d.n,
            })
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(SentimentSection { classifier_id: classifier.id(), rows })
}

/// One embedding per post, aligned with `set.entries`.
pub fn embed_set(
    set: &CorpusSet,
    embedder: &dyn Embedder,
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<Vec<Vec<EmbeddingVector>>, AnalysisError> {
    set.entries
        .iter()
        .map(|e| {
            let texts: Vec<String> = e.corpus.texts().map(str::to_string).collect();
            Ok(embed_texts(embedder, &texts, policy, throttle)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCorpus {
    pub platform: String,
    pub scenario: String,
    pub model: TopicModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub a: String,
    pub b: String,
    pub topics_a: usize,
    pub topics_b: usize,
    pub shared_pairs: usize,
    pub disjoint_a: usize,
    pub disjoint_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSection {
    pub min_topic_size: usize,
    pub threshold: f64,
    pub corpora: Vec<TopicCorpus>,
    pub overlaps: Vec<OverlapSummary>,
    /// Topics the namer failed on (they stay unnamed).
    pub naming_failures: usize,
}

/// Optional topic naming backend.
pub struct Namer<'a> {
    pub provider: &'a dyn ChatProvider,
    pub params: GenParams,
}

/// Topics for every corpus, then overlaps between every pair of real
/// corpora and between each real corpus and its synthetic counterparts.
#[allow(clippy::too_many_arguments)]
pub fn topic_section(
    set: &CorpusSet,
    embeddings: &[Vec<EmbeddingVector>],
    config: &TopicConfig,
    embedder: &dyn Embedder,
    threshold: f64,
    namer: Option<&Namer<'_>>,
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<TopicSection, AnalysisError> {
    if set.entries.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut naming_failures = 0;
    let mut models = Vec::with_capacity(set.entries.len());
    for (entry, emb) in set.entries.iter().zip(embeddings) {
        let mut model = extract_topics(&entry.corpus, emb, config)?;
        if let Some(n) = namer {
            for topic in &mut model.topics {
                if let Err(e) = label_topic(topic, n.provider, &n.params, policy, throttle) {
                    log::warn!("could not name topic {} of {}: {e}", topic.id, entry.display());
                    naming_failures += 1;
                }
            }
        }
        models.push(model);
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let reals: Vec<usize> = (0..set.entries.len()).filter(|&i| set.entries[i].scenario.is_real()).collect();
    for (x, &i) in reals.iter().enumerate() {
        for &j in &reals[x + 1..] {
            pairs.push((i, j));
        }
    }
    for &i in &reals {
        for j in 0..set.entries.len() {
            if !set.entries[j].scenario.is_real() && set.entries[j].platform == set.entries[i].platform {
                pairs.push((i, j));
            }
        }
    }
    let mut overlaps = Vec::new();
    for (i, j) in pairs {
        let (ta, tb) = (&models[i].topics, &models[j].topics);
        let (a, b) = (set.entries[i].display(), set.entries[j].display());
        let summary = if ta.is_empty() || tb.is_empty() {
            OverlapSummary { a, b, topics_a: ta.len(), topics_b: tb.len(), shared_pairs: 0, disjoint_a: ta.len(), disjoint_b: tb.len() }
        } else {
            let m = topic_overlap(ta, tb, embedder, threshold, (&a, &b), policy, throttle)?;
            OverlapSummary {
                a,
                b,
                topics_a: ta.len(),
                topics_b: tb.len(),
                shared_pairs: m.shared_pairs.len(),
                disjoint_a: m.disjoint_counts.0,
                disjoint_b: m.disjoint_counts.1,
            }
        };
        overlaps.push(summary);
    }
    let corpora = set
        .entries
        .iter()
        .zip(models)
        .map(|(e, model)| TopicCorpus { platform: e.platform.name().to_string(), scenario: e.label(), model })
        .collect();
    Ok(TopicSection { min_topic_size: config.min_topic_size, threshold, corpora, overlaps, naming_failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub platform: String,
    pub strategy: String,
    pub top_k: f64,
    pub average: f64,
    pub k: usize,
    pub pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySection {
    pub k: usize,
    pub mode: PairMode,
    pub rows: Vec<SimilarityRow>,
}

/// Real versus each synthetic corpus of the same platform.
pub fn similarity_section(
    set: &CorpusSet,
    embeddings: &[Vec<EmbeddingVector>],
    k: usize,
    mode: PairMode,
) -> Result<SimilaritySection, AnalysisError> {
    if set.entries.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut rows = Vec::new();
    for platform in set.platforms() {
        let Some(real) = set.real(&platform) else { continue };
        let real_vecs = vectors_of(&embeddings[real]);
        for (j, entry) in set.entries.iter().enumerate() {
            if entry.platform != platform || entry.scenario.is_real() {
                continue;
            }
            let r = pairwise_similarity(&real_vecs, &vectors_of(&embeddings[j]), k, mode, 64, ("real", "synthetic"))?;
            rows.push(SimilarityRow {
                platform: platform.name().to_string(),
                strategy: entry.label(),
                top_k: r.top_k_mean,
                average: r.overall_mean,
                k: r.k,
                pairs: r.pair_count,
            });
        }
    }
    Ok(SimilaritySection { k, mode, rows })
}
