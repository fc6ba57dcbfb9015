//! Run configuration: a TOML file with one table per stage, overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use synthpost::corpus::DEFAULT_GRID;
use synthpost::embedsim::PairMode;
use synthpost::{Platform, StrategyKind};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub ingest: IngestSection,
    pub generate: GenerateSection,
    pub provider: ProviderSection,
    pub sentiment: SentimentSection,
    pub topics: TopicsSection,
    pub similarity: SimilaritySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub mock_provider: bool,
    pub report_formats: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    /// Posts kept per platform; all when unset.
    pub sample_per_platform: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub platforms: Vec<String>,
    pub strategies: Vec<String>,
    pub grid: Vec<(f64, f64)>,
    pub target_per_platform: usize,
    pub model: String,
    pub max_tokens: Option<u32>,
    pub max_attempts: usize,
    pub max_consecutive_abandoned: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub base_url: String,
    pub embedding_model: String,
    pub embedding_page_size: usize,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub inter_call_delay_ms: u64,
    /// Dimension of the offline hash embedder.
    pub mock_embedding_dim: usize,
    pub transcript: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSection {
    /// `lexicon` or `remote`.
    pub backend: String,
    pub remote_url: Option<String>,
    pub remote_model: String,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsSection {
    pub min_topic_size: usize,
    pub restarts: usize,
    pub min_silhouette: f64,
    pub max_k: Option<usize>,
    pub overlap_threshold: f64,
    pub name_topics: bool,
    pub naming_temperature: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub k: usize,
    /// `all-pairs` or `per-post-max`.
    pub mode: String,
    pub projection: bool,
    pub projection_clusters: usize,
    pub perplexity: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out_dir: PathBuf::from("run"), seed: 0, mock_provider: false, report_formats: vec!["markdown".into(), "json".into()] }
    }
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            platforms: Vec::new(),
            strategies: vec!["agnostic".into(), "aware".into()],
            grid: DEFAULT_GRID.to_vec(),
            target_per_platform: 1000,
            model: "gpt-3.5-turbo".into(),
            max_tokens: None,
            max_attempts: 3,
            max_consecutive_abandoned: 10,
        }
    }
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            base_url: "https://api.openai.com/v1".into(),
            embedding_model: "text-embedding-3-large".into(),
            embedding_page_size: 100,
            max_retries: 5,
            base_delay_ms: 1000,
            max_delay_ms: 60_000,
            inter_call_delay_ms: 2000,
            mock_embedding_dim: 64,
            transcript: false,
        }
    }
}

impl Default for SentimentSection {
    fn default() -> Self {
        SentimentSection { backend: "lexicon".into(), remote_url: None, remote_model: "remote".into(), lexicon: None }
    }
}

impl Default for TopicsSection {
    fn default() -> Self {
        TopicsSection { min_topic_size: 10, restarts: 10, min_silhouette: 0.25, max_k: None, overlap_threshold: 0.5, name_topics: true, naming_temperature: 0.2 }
    }
}

impl Default for SimilaritySection {
    fn default() -> Self {
        SimilaritySection { k: 1000, mode: "all-pairs".into(), projection: false, projection_clusters: 50, perplexity: 30.0 }
    }
}

/// Problem with the configuration or flags; reported as a usage error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.run.out_dir);
        if let Some(p) = cfg.ingest.input.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.sentiment.lexicon.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.platforms()?;
        self.strategies()?;
        self.pair_mode()?;
        for f in &self.run.report_formats {
            f.parse::<synthpost::report::ReportFormat>().map_err(ConfigError)?;
        }
        if !matches!(self.sentiment.backend.as_str(), "lexicon" | "remote") {
            return Err(ConfigError(format!("sentiment.backend must be lexicon or remote, not {:?}", self.sentiment.backend)));
        }
        if self.sentiment.backend == "remote" && self.sentiment.remote_url.is_none() && !self.run.mock_provider {
            return Err(ConfigError("sentiment.backend = \"remote\" needs sentiment.remote_url".into()));
        }
        if self.topics.min_topic_size < 2 {
            return Err(ConfigError("topics.min_topic_size must be at least 2".into()));
        }
        if !(-1.0..=1.0).contains(&self.topics.overlap_threshold) {
            return Err(ConfigError("topics.overlap_threshold must lie in [-1, 1]".into()));
        }
        if self.similarity.k == 0 {
            return Err(ConfigError("similarity.k must be positive".into()));
        }
        if self.generate.target_per_platform == 0 {
            return Err(ConfigError("generate.target_per_platform must be positive".into()));
        }
        Ok(())
    }

    /// Configured platforms; empty means every platform in the source corpus.
    pub fn platforms(&self) -> Result<Vec<Platform>, ConfigError> {
        self.generate.platforms.iter().map(|p| p.parse::<Platform>().map_err(|e| ConfigError(e.to_string()))).collect()
    }

    pub fn strategies(&self) -> Result<Vec<StrategyKind>, ConfigError> {
        self.generate.strategies.iter().map(|s| s.parse::<StrategyKind>().map_err(|e| ConfigError(e.to_string()))).collect()
    }

    pub fn pair_mode(&self) -> Result<PairMode, ConfigError> {
        match self.similarity.mode.as_str() {
            "all-pairs" => Ok(PairMode::AllPairs),
            "per-post-max" => Ok(PairMode::PerPostMax),
            other => Err(ConfigError(format!("similarity.mode must be all-pairs or per-post-max, not {other:?}"))),
        }
    }
}
