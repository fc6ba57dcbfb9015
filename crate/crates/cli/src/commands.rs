//! Subcommand implementations. Everything a run produces lives under the
//! configured output directory:
//!
//! ```text
//! corpus.jsonl            ingested real posts
//! generated/              per-setting corpora, ledger.json, rejected.jsonl
//! analysis/               one JSON file per analysis, plus metadata.json
//! report/                 rendered reports
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use synthpost::analysis::{
    embed_set, lexical_section, sentiment_section, similarity_section, topic_section, CorpusSet, LexicalTable, Namer,
    SentimentSection, SimilaritySection, TopicSection,
};
use synthpost::corpus::{load_corpus, partition_by_platform, sample_posts, save_corpus, CorpusFormat};
use synthpost::embedsim::{kmeans, tsne_project, vectors_of, KMeansConfig, PointLabel, TsneParams};
use synthpost::genpipe::{run_generation, RunOptions, RunPlan};
use synthpost::prompting::TemplateSet;
use synthpost::provider::http::{ApiKey, HttpProvider, TranscriptLog};
use synthpost::provider::mock::{EchoChat, HashEmbedder, KeywordNamer};
use synthpost::provider::{ChatProvider, Embedder, EmbeddingVector, GenParams, RetryPolicy, Throttle};
use synthpost::report::{emit_report, FidelityReport, ReportFormat};
use synthpost::sentiment::{Classifier, LexiconClassifier, RemoteClassifier};
use synthpost::topicmod::TopicConfig;
use synthpost::{Corpus, Post};

use crate::config::{Config, ConfigError};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GENERATED_DIR: &str = "generated";
pub const ANALYSIS_DIR: &str = "analysis";
pub const REPORT_DIR: &str = "report";
const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Lexical,
    Sentiment,
    Topics,
    Similarity,
}

impl Analysis {
    pub const ALL: [Analysis; 4] = [Analysis::Lexical, Analysis::Sentiment, Analysis::Topics, Analysis::Similarity];

    fn file(self) -> &'static str {
        match self {
            Analysis::Lexical => "lexical.json",
            Analysis::Sentiment => "sentiment.json",
            Analysis::Topics => "topics.json",
            Analysis::Similarity => "similarity.json",
        }
    }
}

/// Providers for one invocation, live or offline.
struct Backends {
    chat: Box<dyn ChatProvider>,
    namer: Box<dyn ChatProvider>,
    embedder: Box<dyn Embedder>,
    policy: RetryPolicy,
}

pub struct Session {
    pub cfg: Config,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

impl Session {
    fn out(&self) -> &Path {
        &self.cfg.run.out_dir
    }

    fn analysis_path(&self, name: &str) -> PathBuf {
        self.out().join(ANALYSIS_DIR).join(name)
    }

    fn record(&self, entries: impl IntoIterator<Item = (&'static str, String)>) -> Result<()> {
        let path = self.analysis_path(METADATA_FILE);
        let mut meta: BTreeMap<String, String> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
        for (k, v) in entries {
            meta.insert(k.to_string(), v);
        }
        write_json(&path, &meta)
    }

    fn backends(&self) -> Result<Backends> {
        let p = &self.cfg.provider;
        if self.cfg.run.mock_provider {
            let embedder = HashEmbedder::new(p.mock_embedding_dim, self.cfg.run.seed).with_page_size(p.embedding_page_size);
            return Ok(Backends {
                chat: Box::new(EchoChat),
                namer: Box::new(KeywordNamer),
                embedder: Box::new(embedder),
                policy: RetryPolicy::immediate(0),
            });
        }
        let key = ApiKey::from_env()?;
        let make = || -> Result<HttpProvider> {
            let mut h = HttpProvider::new(&p.base_url, Some(key.clone()))
                ?
                .with_models(&self.cfg.generate.model, &p.embedding_model)
                .with_page_size(p.embedding_page_size);
            if p.transcript {
                let path = self.out().join("transcript.jsonl");
                fs::create_dir_all(self.out())?;
                h = h.with_transcript(TranscriptLog::open(&path).with_context(|| format!("cannot open {}", path.display()))?);
            }
            Ok(h)
        };
        Ok(Backends {
            chat: Box::new(make()?),
            namer: Box::new(make()?),
            embedder: Box::new(make()?),
            policy: RetryPolicy {
                max_retries: p.max_retries,
                base_delay: Duration::from_millis(p.base_delay_ms),
                max_delay: Duration::from_millis(p.max_delay_ms),
                inter_call_delay: Duration::from_millis(p.inter_call_delay_ms),
            },
        })
    }

    fn classifier(&self) -> Result<Box<dyn Classifier>> {
        let s = &self.cfg.sentiment;
        if s.backend == "remote" && !self.cfg.run.mock_provider {
            let url = s.remote_url.clone().expect("validated");
            return Ok(Box::new(RemoteClassifier::new(url, &s.remote_model)?));
        }
        match &s.lexicon {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("cannot read lexicon {}", path.display()))?;
                Ok(Box::new(LexiconClassifier::from_tsv(&text)?))
            }
            None => Ok(Box::new(LexiconClassifier::builtin())),
        }
    }

    pub fn ingest(&self, input: Option<&Path>, format: Option<&str>, sample: Option<usize>) -> Result<()> {
        let input = input
            .map(Path::to_path_buf)
            .or_else(|| self.cfg.ingest.input.clone())
            .ok_or_else(|| ConfigError("no input corpus: pass --input or set ingest.input".into()))?;
        let format = match format.or(self.cfg.ingest.format.as_deref()) {
            Some(f) => f.parse::<CorpusFormat>().map_err(ConfigError)?,
            None => CorpusFormat::from_path(&input),
        };
        let loaded = load_corpus(&input, format)?;
        let sample = sample.or(self.cfg.ingest.sample_per_platform);
        let mut posts: Vec<Post> = Vec::new();
        for (platform, corpus) in partition_by_platform(&loaded.corpus) {
            let kept = match sample {
                Some(n) if n < corpus.len() => sample_posts(&corpus, n, self.cfg.run.seed)?,
                Some(n) => {
                    log::warn!("{platform}: asked for {n} posts, only {} available", corpus.len());
                    corpus
                }
                None => corpus,
            };
            println!("{platform}: {} posts", kept.len());
            posts.extend(kept.posts);
        }
        if !loaded.malformed.is_empty() {
            println!("skipped {} malformed record(s)", loaded.malformed.len());
        }
        let path = self.out().join(CORPUS_FILE);
        save_corpus(&Corpus::new(posts), &path)?;
        println!("wrote {}", path.display());
        let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.record([
            ("ingest.input", name),
            ("ingest.sample_per_platform", sample.map_or("all".into(), |n| n.to_string())),
            ("ingest.malformed_records", loaded.malformed.len().to_string()),
            ("run.seed", self.cfg.run.seed.to_string()),
        ])
    }

    fn real_corpus(&self) -> Result<Corpus> {
        let path = self.out().join(CORPUS_FILE);
        if !path.exists() {
            bail!("corpus not found: {} (run `ingest` first)", path.display());
        }
        Ok(load_corpus(&path, CorpusFormat::Jsonl)?.corpus)
    }

    fn plan(&self, source: &Corpus) -> Result<RunPlan> {
        let g = &self.cfg.generate;
        let mut platforms = self.cfg.platforms()?;
        if platforms.is_empty() {
            platforms = partition_by_platform(source).into_keys().collect();
        }
        let mut plan = RunPlan::new(platforms, self.cfg.strategies()?, g.target_per_platform, self.cfg.run.seed);
        plan.grid = g.grid.clone();
        plan.model_name = g.model.clone();
        plan.max_tokens = g.max_tokens;
        plan.max_attempts = g.max_attempts;
        plan.max_consecutive_abandoned = g.max_consecutive_abandoned;
        Ok(plan)
    }

    /// Returns whether every setting reached its target.
    pub fn generate(&self, resume: bool, max_batches: Option<u64>) -> Result<bool> {
        let source = self.real_corpus()?;
        let plan = self.plan(&source)?;
        let backends = self.backends()?;
        let templates = TemplateSet::builtin();
        let options = RunOptions {
            out_dir: Some(self.out().join(GENERATED_DIR)),
            resume,
            max_batches,
            policy: backends.policy.clone(),
        };
        let output = run_generation(&plan, &source, backends.chat.as_ref(), &templates, &options)?;
        for (key, entry) in &output.ledger.settings {
            println!(
                "{key}: {} accepted, {} rejected, {} calls, {} abandoned batch(es)",
                entry.accepted,
                entry.rejected_total(),
                entry.calls,
                entry.abandoned_batches
            );
        }
        if !output.complete {
            println!("stopped before every setting reached its target; rerun with --resume to continue");
        }
        let grid: Vec<String> = plan.grid.iter().map(|(t, p)| format!("T={t} P={p}")).collect();
        self.record([
            ("generate.model", plan.model_name.clone()),
            ("generate.provider", output.ledger.provider.clone()),
            ("generate.target_per_platform", plan.target_per_platform.to_string()),
            ("generate.grid", grid.join("; ")),
            ("generate.template_hash.aware", templates.aware.hash.clone()),
            ("generate.template_hash.agnostic", templates.agnostic.hash.clone()),
            ("generate.fingerprint", output.ledger.fingerprint.clone()),
            ("run.seed", self.cfg.run.seed.to_string()),
        ])?;
        Ok(output.complete)
    }

    fn corpus_set(&self) -> Result<CorpusSet> {
        let mut posts = self.real_corpus()?.posts;
        let dir = self.out().join(GENERATED_DIR);
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("cannot list {}", dir.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            files.retain(|p| p.extension().is_some_and(|x| x == "jsonl") && !p.ends_with("rejected.jsonl"));
            files.sort();
            for f in files {
                posts.extend(load_corpus(&f, CorpusFormat::Jsonl)?.corpus.posts);
            }
        }
        Ok(CorpusSet::from_posts(posts))
    }

    pub fn analyze(&self, which: &[Analysis]) -> Result<()> {
        let set = self.corpus_set()?;
        let needs_embeddings = which.iter().any(|a| matches!(a, Analysis::Topics | Analysis::Similarity));
        let backends = if needs_embeddings { Some(self.backends()?) } else { None };
        let mut embeddings: Option<Vec<Vec<EmbeddingVector>>> = None;
        for &analysis in which {
            match analysis {
                Analysis::Lexical => {
                    let tables: Vec<LexicalTable> = lexical_section(&set)?;
                    write_json(&self.analysis_path(analysis.file()), &tables)?;
                }
                Analysis::Sentiment => {
                    let classifier = self.classifier()?;
                    let section = sentiment_section(&set, classifier.as_ref())?;
                    self.record([("sentiment.classifier_id", section.classifier_id.clone())])?;
                    write_json(&self.analysis_path(analysis.file()), &section)?;
                }
                Analysis::Topics | Analysis::Similarity => {
                    let b = backends.as_ref().expect("built above");
                    let throttle = Throttle::new(b.policy.inter_call_delay);
                    if embeddings.is_none() {
                        embeddings = Some(embed_set(&set, b.embedder.as_ref(), &b.policy, &throttle)?);
                        self.record([("embedder", b.embedder.id())])?;
                    }
                    let emb = embeddings.as_deref().expect("computed above");
                    if analysis == Analysis::Topics {
                        self.topics(&set, emb, b, &throttle)?;
                    } else {
                        self.similarity(&set, emb)?;
                    }
                }
            }
            println!("wrote {}", self.analysis_path(analysis.file()).display());
        }
        Ok(())
    }

    fn topics(&self, set: &CorpusSet, emb: &[Vec<EmbeddingVector>], b: &Backends, throttle: &Throttle) -> Result<()> {
        let t = &self.cfg.topics;
        let config = TopicConfig {
            min_topic_size: t.min_topic_size,
            seed: self.cfg.run.seed,
            restarts: t.restarts,
            min_silhouette: t.min_silhouette,
            max_k: t.max_k,
            ..TopicConfig::default()
        };
        let params = GenParams::new(&self.cfg.generate.model, t.naming_temperature, 1.0)?;
        let namer = Namer { provider: b.namer.as_ref(), params };
        let section: TopicSection = topic_section(
            set,
            emb,
            &config,
            b.embedder.as_ref(),
            t.overlap_threshold,
            t.name_topics.then_some(&namer),
            &b.policy,
            throttle,
        )?;
        self.record([
            ("topics.min_topic_size", t.min_topic_size.to_string()),
            ("topics.restarts", t.restarts.to_string()),
            ("topics.min_silhouette", t.min_silhouette.to_string()),
            ("topics.overlap_threshold", t.overlap_threshold.to_string()),
            ("topics.namer", if t.name_topics { b.namer.id() } else { "off".into() }),
        ])?;
        write_json(&self.analysis_path(Analysis::Topics.file()), &section)
    }

    fn similarity(&self, set: &CorpusSet, emb: &[Vec<EmbeddingVector>]) -> Result<()> {
        let s = &self.cfg.similarity;
        let section: SimilaritySection = similarity_section(set, emb, s.k, self.cfg.pair_mode()?)?;
        self.record([("similarity.k", s.k.to_string()), ("similarity.mode", s.mode.clone())])?;
        write_json(&self.analysis_path(Analysis::Similarity.file()), &section)?;
        if s.projection {
            self.projections(set, emb)?;
        }
        Ok(())
    }

    /// Per platform: cluster every corpus, then lay all centroids out in 2-D.
    fn projections(&self, set: &CorpusSet, emb: &[Vec<EmbeddingVector>]) -> Result<()> {
        let s = &self.cfg.similarity;
        for platform in set.platforms() {
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for (entry, vectors) in set.entries.iter().zip(emb).filter(|(e, _)| e.platform == platform) {
                let vectors = vectors_of(vectors);
                let k = s.projection_clusters.min(vectors.len());
                let clusters = kmeans(&vectors, &KMeansConfig::new(k, self.cfg.run.seed))?;
                for (id, c) in clusters.centroids.into_iter().enumerate() {
                    points.push(c);
                    labels.push(PointLabel { cluster_id: id, scenario: entry.label() });
                }
            }
            if points.len() < 5 {
                log::warn!("{platform}: only {} centroids, skipping projection", points.len());
                continue;
            }
            let params = TsneParams { perplexity: s.perplexity, seed: self.cfg.run.seed, ..TsneParams::default() };
            let projection = tsne_project(&points, &labels, &params)?;
            let stem = format!("projection_{}", platform.slug());
            fs::write(self.analysis_path(&format!("{stem}.csv")), projection.to_csv())?;
            fs::write(self.analysis_path(&format!("{stem}.svg")), projection.to_svg())?;
        }
        self.record([
            ("projection.clusters", s.projection_clusters.to_string()),
            ("projection.perplexity", s.perplexity.to_string()),
        ])
    }

    pub fn report(&self, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
        let load = |a: Analysis| -> Result<Option<PathBuf>> {
            let p = self.analysis_path(a.file());
            Ok(p.exists().then_some(p))
        };
        let mut report = FidelityReport::default();
        if let Some(p) = load(Analysis::Lexical)? {
            report.lexical = Some(read_json(&p)?);
        }
        if let Some(p) = load(Analysis::Sentiment)? {
            report.sentiment = Some(read_json::<SentimentSection>(&p)?);
        }
        if let Some(p) = load(Analysis::Topics)? {
            report.topics = Some(read_json(&p)?);
        }
        if let Some(p) = load(Analysis::Similarity)? {
            report.similarity = Some(read_json(&p)?);
        }
        if !report.has_analyses() {
            bail!("no analyses found under {} (run `analyze` first)", self.out().join(ANALYSIS_DIR).display());
        }
        let meta = self.analysis_path(METADATA_FILE);
        if meta.exists() {
            report.metadata = read_json(&meta)?;
        }
        let dir = self.out().join(REPORT_DIR);
        let mut written = Vec::new();
        for &f in formats {
            written.extend(emit_report(&report, f, &dir)?);
        }
        for p in &written {
            println!("wrote {}", p.display());
        }
        Ok(written)
    }
}
