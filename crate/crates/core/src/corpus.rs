//! Posts, corpora, and the JSONL/CSV files they live in.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::seeding::rng_from_seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: zero valid records ({malformed} malformed)")]
    NoValidRecords { path: PathBuf, malformed: usize },
    #[error("{path}: duplicate post id {id:?}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("cannot sample {requested} posts from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sample size must be positive")]
    EmptySample,
    #[error("invalid platform label {0:?}")]
    InvalidPlatform(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Social platform a post was published on (or is imitating).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Platform {
    Twitter,
    Facebook,
    Reddit,
    Instagram,
    TikTok,
    YouTube,
    Other(String),
}

impl Platform {
    /// The six named platforms, in report order.
    pub const KNOWN: [Platform; 6] = [
        Platform::Twitter,
        Platform::Facebook,
        Platform::Reddit,
        Platform::Instagram,
        Platform::TikTok,
        Platform::YouTube,
    ];

    pub fn name(&self) -> &str {
        match self {
            Platform::Twitter => "Twitter",
            Platform::Facebook => "Facebook",
            Platform::Reddit => "Reddit",
            Platform::Instagram => "Instagram",
            Platform::TikTok => "TikTok",
            Platform::YouTube => "YouTube",
            Platform::Other(label) => label,
        }
    }

    /// Lowercase identifier safe for file names.
    pub fn slug(&self) -> String {
        self.name()
            .chars()
            .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect()
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Platform {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim();
        if label.is_empty() {
            return Err(CorpusError::InvalidPlatform(s.to_string()));
        }
        let known = Platform::KNOWN
            .iter()
            .find(|p| p.name().eq_ignore_ascii_case(label));
        Ok(match known {
            Some(p) => p.clone(),
            None if label.eq_ignore_ascii_case("x") => Platform::Twitter,
            None => Platform::Other(label.to_string()),
        })
    }
}

impl Serialize for Platform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Platform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Real,
    Synthetic,
}

/// Prompting strategy a synthetic post was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Agnostic,
    Aware,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Agnostic => "agnostic",
            StrategyKind::Aware => "aware",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agnostic" | "platform-agnostic" => Ok(StrategyKind::Agnostic),
            "aware" | "platform-aware" => Ok(StrategyKind::Aware),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// The sampling grid used when no explicit grid is configured.
pub const DEFAULT_GRID: [(f64, f64); 3] = [(0.7, 1.0), (1.0, 0.7), (1.0, 1.0)];

/// Where a post came from: the real dataset or one synthetic setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTag {
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

impl ScenarioTag {
    pub fn real() -> Self {
        ScenarioTag { kind: ScenarioKind::Real, strategy: None, temperature: None, top_p: None }
    }

    pub fn synthetic(strategy: StrategyKind, temperature: f64, top_p: f64) -> Self {
        ScenarioTag {
            kind: ScenarioKind::Synthetic,
            strategy: Some(strategy),
            temperature: Some(temperature),
            top_p: Some(top_p),
        }
    }

    pub fn is_real(&self) -> bool {
        self.kind == ScenarioKind::Real
    }

    /// Checks the presence rules and, unless `allow_off_grid`, that the
    /// (T, P) pair is one of `grid`.
    pub fn validate(&self, grid: &[(f64, f64)], allow_off_grid: bool) -> Result<(), CorpusError> {
        let fields = (self.strategy, self.temperature, self.top_p);
        match (self.kind, fields) {
            (ScenarioKind::Real, (None, None, None)) => Ok(()),
            (ScenarioKind::Real, _) => Err(CorpusError::InvalidScenario(
                "real posts carry no generation settings".into(),
            )),
            (ScenarioKind::Synthetic, (Some(_), Some(t), Some(p))) => {
                if !(t > 0.0 && t <= 2.0) {
                    return Err(CorpusError::InvalidScenario(format!("temperature {t} outside (0, 2]")));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(CorpusError::InvalidScenario(format!("top_p {p} outside (0, 1]")));
                }
                if !allow_off_grid && !grid.iter().any(|&(gt, gp)| gt == t && gp == p) {
                    return Err(CorpusError::InvalidScenario(format!(
                        "(T={t}, P={p}) is not on the configured grid"
                    )));
                }
                Ok(())
            }
            (ScenarioKind::Synthetic, _) => Err(CorpusError::InvalidScenario(
                "synthetic posts need strategy, temperature and top_p".into(),
            )),
        }
    }

    /// Short human label, e.g. `real` or `aware T=1 P=0.7`.
    pub fn label(&self) -> String {
        match (self.strategy, self.temperature, self.top_p) {
            (Some(s), Some(t), Some(p)) => format!("{s} T={t} P={p}"),
            _ => "real".to_string(),
        }
    }
}

impl Default for ScenarioTag {
    fn default() -> Self {
        ScenarioTag::real()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub platform: Platform,
    pub text: String,
    #[serde(default)]
    pub scenario: ScenarioTag,
}

impl Post {
    pub fn real(id: impl Into<String>, platform: Platform, text: impl Into<String>) -> Self {
        Post { id: id.into(), platform, text: text.into(), scenario: ScenarioTag::real() }
    }
}

/// An ordered collection of posts plus free-form provenance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub posts: Vec<Post>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(posts: Vec<Post>) -> Self {
        Corpus { posts, provenance: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.posts.iter().map(|p| p.text.as_str())
    }

    pub fn platform_posts<'a>(&'a self, platform: &'a Platform) -> impl Iterator<Item = &'a Post> + 'a {
        self.posts.iter().filter(move |p| &p.platform == platform)
    }

    /// The single platform every post shares, if there is one.
    pub fn common_platform(&self) -> Option<&Platform> {
        let first = &self.posts.first()?.platform;
        self.posts.iter().all(|p| &p.platform == first).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// A record that failed to parse, by 1-based line (JSONL) or record (CSV) number.
#[derive(Debug, Clone, PartialEq)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    pub malformed: Vec<Malformed>,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    platform: Platform,
    text: String,
    #[serde(default)]
    scenario: Option<ScenarioTag>,
}

/// Reads a corpus file. Malformed records are reported in the outcome, and
/// the corpus provenance records the source path, format and malformed count.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadOutcome, CorpusError> {
    let read_err = |source| CorpusError::Read { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(read_err)?;
    let file_label = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut records: Vec<(usize, Result<RawRecord, String>)> = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(read_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                records.push((idx + 1, serde_json::from_str(&line).map_err(|e| e.to_string())));
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            for (idx, row) in reader.deserialize::<CsvRecord>().enumerate() {
                // header is line 1
                let parsed = row.map_err(|e| e.to_string()).and_then(CsvRecord::into_raw);
                records.push((idx + 2, parsed));
            }
        }
    }

    let mut posts = Vec::with_capacity(records.len());
    let mut malformed = Vec::new();
    let mut seen = HashSet::new();
    for (line, record) in records {
        let record = match record {
            Ok(r) => r,
            Err(reason) => {
                malformed.push(Malformed { line, reason });
                continue;
            }
        };
        let scenario = record.scenario.unwrap_or_default();
        if let Err(e) = scenario.validate(&DEFAULT_GRID, true) {
            malformed.push(Malformed { line, reason: e.to_string() });
            continue;
        }
        let id = record
            .id
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| format!("{file_label}:{line}"));
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { path: path.to_path_buf(), id });
        }
        posts.push(Post { id, platform: record.platform, text: record.text, scenario });
    }

    if posts.is_empty() {
        return Err(CorpusError::NoValidRecords { path: path.to_path_buf(), malformed: malformed.len() });
    }
    for m in &malformed {
        log::warn!("{}:{}: skipped malformed record: {}", path.display(), m.line, m.reason);
    }

    let mut corpus = Corpus::new(posts);
    corpus.provenance.insert("source".into(), path.display().to_string());
    corpus.provenance.insert(
        "format".into(),
        match format {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::Csv => "csv",
        }
        .into(),
    );
    corpus.provenance.insert("malformed_records".into(), malformed.len().to_string());
    Ok(LoadOutcome { corpus, malformed })
}

#[derive(Deserialize)]
struct CsvRecord {
    #[serde(default)]
    id: Option<String>,
    platform: String,
    #[serde(default)]
    text: Option<String>,
}

impl CsvRecord {
    fn into_raw(self) -> Result<RawRecord, String> {
        let platform = self.platform.parse::<Platform>().map_err(|e| e.to_string())?;
        let text = self.text.ok_or_else(|| "missing field `text`".to_string())?;
        Ok(RawRecord { id: self.id, platform, text, scenario: None })
    }
}

/// Serialises posts to JSONL, one object per line, in corpus order.
pub fn write_jsonl<W: Write>(posts: &[Post], mut out: W) -> std::io::Result<()> {
    for post in posts {
        serde_json::to_writer(&mut out, post)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let write_err = |source| CorpusError::Write { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(write_err)?;
    }
    let file = File::create(path).map_err(write_err)?;
    write_jsonl(&corpus.posts, BufWriter::new(file)).map_err(write_err)
}

/// Draws `n` indices out of `0..len` without replacement using a partial
/// forward Fisher–Yates shuffle: step `i` swaps position `i` with a uniform
/// position in `i..len`. Returned in draw order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    assert!(n <= len);
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Uniform sample of `n` posts without replacement. The sampled posts keep
/// their original corpus order, so `n == len` returns an identical copy.
pub fn sample_posts(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n == 0 {
        return Err(CorpusError::EmptySample);
    }
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge { requested: n, available: corpus.len() });
    }
    let mut picked = sample_indices(corpus.len(), n, seed);
    picked.sort_unstable();
    let mut sampled = Corpus::new(picked.into_iter().map(|i| corpus.posts[i].clone()).collect());
    sampled.provenance = corpus.provenance.clone();
    sampled.provenance.insert("sample_n".into(), n.to_string());
    sampled.provenance.insert("sample_seed".into(), seed.to_string());
    Ok(sampled)
}

pub fn partition_by_platform(corpus: &Corpus) -> BTreeMap<Platform, Corpus> {
    let mut parts: BTreeMap<Platform, Corpus> = BTreeMap::new();
    for post in &corpus.posts {
        parts
            .entry(post.platform.clone())
            .or_insert_with(|| Corpus { posts: Vec::new(), provenance: corpus.provenance.clone() })
            .posts
            .push(post.clone());
    }
    parts
}
