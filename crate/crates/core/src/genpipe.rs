//! Synthetic-corpus generation over a strategy × (T, P) grid, with
//! rejection accounting and checkpoint/resume.
//!
//! Checkpoint layout under the output directory:
//!
//! * `<setting>.jsonl`: accepted posts of one setting, appended after every
//!   batch and truncated to the ledger count on resume;
//! * `ledger.json`: per-setting counters and the next batch index;
//! * `rejected.jsonl`: every rejected payload, verbatim.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, write_jsonl, Corpus, CorpusError, CorpusFormat, Platform, Post, ScenarioTag, StrategyKind, DEFAULT_GRID};
use crate::prompting::{
    build_prompt, parse_generation_output, select_examples, PromptError, Rejection, RejectionKind, Strategy, TemplateSet,
    EXAMPLES_PER_PROMPT, OUTPUTS_PER_CALL,
};
use crate::provider::{chat_complete, ChatProvider, GenParams, ProviderError, RetryPolicy, Throttle};
use crate::seeding::{fnv1a, mix_seed};

/// Examples are never shortened below this many characters.
const MIN_EXAMPLE_CHARS: usize = 32;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("provider failure in {setting} batch {batch}: {source}")]
    Provider {
        setting: String,
        batch: u64,
        #[source]
        source: ProviderError,
    },
    #[error("{setting}: {count} consecutive batches abandoned")]
    TooManyAbandoned { setting: String, count: u64 },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn default_grid() -> Vec<(f64, f64)> {
    DEFAULT_GRID.to_vec()
}
fn default_target() -> usize {
    1000
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_attempts() -> usize {
    3
}
fn default_abandon_limit() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub platforms: Vec<Platform>,
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_grid")]
    pub grid: Vec<(f64, f64)>,
    #[serde(default = "default_target")]
    pub target_per_platform: usize,
    #[serde(default)]
    pub run_seed: u64,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    /// Calls per batch before the batch is abandoned.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    /// Consecutive abandoned batches tolerated per setting.
    #[serde(default = "default_abandon_limit")]
    pub max_consecutive_abandoned: u64,
    #[serde(default)]
    pub allow_off_grid: bool,
}

impl RunPlan {
    pub fn new(platforms: Vec<Platform>, strategies: Vec<StrategyKind>, target_per_platform: usize, run_seed: u64) -> Self {
        RunPlan {
            platforms,
            strategies,
            grid: default_grid(),
            target_per_platform,
            run_seed,
            model_name: default_model(),
            max_tokens: None,
            max_attempts: default_attempts(),
            max_consecutive_abandoned: default_abandon_limit(),
            allow_off_grid: false,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Plan(m.to_string()));
        if self.platforms.is_empty() || self.strategies.is_empty() || self.grid.is_empty() {
            return bad("platforms, strategies and grid must be non-empty");
        }
        if self.target_per_platform == 0 {
            return bad("target_per_platform must be positive");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        for &(t, p) in &self.grid {
            ScenarioTag::synthetic(StrategyKind::Aware, t, p)
                .validate(&DEFAULT_GRID, self.allow_off_grid)
                .map_err(|e| GenError::Plan(e.to_string()))?;
            GenParams::new(&self.model_name, t, p).map_err(|e| GenError::Plan(e.to_string()))?;
        }
        Ok(())
    }

    /// Settings in generation order: platform, then strategy, then grid point.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for platform in &self.platforms {
            for &strategy in &self.strategies {
                for &(temperature, top_p) in &self.grid {
                    out.push(Setting { platform: platform.clone(), strategy, temperature, top_p });
                }
            }
        }
        out
    }

    fn fingerprint(&self, source: &Corpus, templates: &TemplateSet) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("plan serialises"));
        h.update(templates.get(StrategyKind::Aware).hash.as_bytes());
        h.update(templates.get(StrategyKind::Agnostic).hash.as_bytes());
        for post in &source.posts {
            h.update(post.id.as_bytes());
            h.update([0]);
            h.update(post.text.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// One cell of the generation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub platform: Platform,
    pub strategy: StrategyKind,
    pub temperature: f64,
    pub top_p: f64,
}

impl Setting {
    /// File-safe key, e.g. `twitter__aware__t0.7_p1`.
    pub fn key(&self) -> String {
        format!("{}__{}__t{}_p{}", self.platform.slug(), self.strategy, self.temperature, self.top_p)
    }

    pub fn scenario(&self) -> ScenarioTag {
        ScenarioTag::synthetic(self.strategy, self.temperature, self.top_p)
    }

    /// Seed of batch `batch`: mixes the run seed, platform, strategy, both
    /// sampling parameters' bit patterns and the batch index.
    pub fn batch_seed(&self, run_seed: u64, batch: u64) -> u64 {
        let strategy = match self.strategy {
            StrategyKind::Agnostic => 0,
            StrategyKind::Aware => 1,
        };
        mix_seed(&[
            run_seed,
            fnv1a(self.platform.slug().as_bytes()),
            strategy,
            self.temperature.to_bits(),
            self.top_p.to_bits(),
            batch,
        ])
    }
}

/// Counters for one setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SettingLedger {
    pub accepted: u64,
    pub rejected: BTreeMap<RejectionKind, u64>,
    pub calls: u64,
    pub abandoned_batches: u64,
    pub consecutive_abandoned: u64,
    /// Accepted posts identical to one of their prompt's examples.
    pub duplicates: u64,
    pub overflow_events: u64,
    pub template_hash: String,
    pub elapsed_ms: u64,
    pub next_batch: u64,
    pub complete: bool,
}

impl SettingLedger {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub fingerprint: String,
    pub provider: String,
    pub settings: BTreeMap<String, SettingLedger>,
}

impl RunLedger {
    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GenError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| GenError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn total_accepted(&self) -> u64 {
        self.settings.values().map(|s| s.accepted).sum()
    }
}

/// Result of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub posts: Vec<Post>,
    pub calls: u64,
    pub rejections: Vec<Rejection>,
    pub overflow_events: u64,
    pub duplicates: u64,
}

impl BatchOutcome {
    pub fn abandoned(&self) -> bool {
        self.posts.is_empty()
    }
}

fn shorten(text: &str, halvings: u32) -> String {
    if halvings == 0 {
        return text.to_string();
    }
    let chars = text.chars().count();
    let keep = (chars >> halvings.min(16)).max(MIN_EXAMPLE_CHARS);
    text.chars().take(keep).collect()
}

/// Selects examples, prompts, and validates the reply for one batch of
/// `count` posts. A rejected reply is retried with freshly drawn examples up
/// to `max_attempts` calls; an overflow halves the examples' length.
#[allow(clippy::too_many_arguments)]
pub fn generate_batch(
    source: &Corpus,
    setting: &Setting,
    params: &GenParams,
    count: usize,
    batch: u64,
    batch_seed: u64,
    max_attempts: usize,
    provider: &dyn ChatProvider,
    templates: &TemplateSet,
    policy: &RetryPolicy,
    throttle: &Throttle,
) -> Result<BatchOutcome, GenError> {
    let key = setting.key();
    let strategy = Strategy::for_kind(setting.strategy, &setting.platform);
    let mut outcome = BatchOutcome { posts: Vec::new(), calls: 0, rejections: Vec::new(), overflow_events: 0, duplicates: 0 };
    let mut halvings = 0;
    for attempt in 0..max_attempts as u64 {
        let mut examples = select_examples(source, &setting.platform, mix_seed(&[batch_seed, attempt]))?;
        for e in &mut examples {
            e.text = shorten(&e.text, halvings);
        }
        let prompt = build_prompt(&examples, &strategy, count, templates);
        let reply = match chat_complete(provider, &prompt, params, policy, throttle) {
            Ok(r) => r,
            Err(e) if e.is_overflow() => {
                outcome.calls += 1;
                outcome.overflow_events += 1;
                halvings += 1;
                log::warn!("{key} batch {batch}: context overflow, shortening examples");
                continue;
            }
            Err(source) => return Err(GenError::Provider { setting: key, batch, source }),
        };
        outcome.calls += 1 + u64::from(reply.retries);
        match parse_generation_output(&reply.value.text, count) {
            Ok(texts) => {
                for (j, text) in texts.into_iter().enumerate() {
                    if examples.iter().any(|e| e.text.trim() == text.trim()) {
                        outcome.duplicates += 1;
                    }
                    outcome.posts.push(Post {
                        id: format!("{key}:{batch}:{j}"),
                        platform: setting.platform.clone(),
                        text,
                        scenario: setting.scenario(),
                    });
                }
                return Ok(outcome);
            }
            Err(rejection) => {
                log::debug!("{key} batch {batch} attempt {attempt}: {}", rejection.kind);
                outcome.rejections.push(rejection);
            }
        }
    }
    log::warn!("{key} batch {batch}: abandoned after {max_attempts} attempts");
    Ok(outcome)
}

/// Execution options that do not affect generated content.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Checkpoint directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Continue from an existing ledger in `out_dir`.
    pub resume: bool,
    /// Stop after this many batches in this invocation (for interruption).
    pub max_batches: Option<u64>,
    pub policy: RetryPolicy,
}

impl RunOptions {
    pub fn in_memory() -> Self {
        RunOptions { out_dir: None, resume: false, max_batches: None, policy: RetryPolicy::immediate(2) }
    }

    pub fn checkpointed(dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: Some(dir.into()), ..RunOptions::in_memory() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Corpus per setting key.
    pub corpora: BTreeMap<String, Corpus>,
    pub ledger: RunLedger,
    /// Every setting reached its target.
    pub complete: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io { path: path.to_path_buf(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GenError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

struct Checkpoint {
    dir: PathBuf,
    rejected: BufWriter<fs::File>,
}

impl Checkpoint {
    /// Opens `dir`; unless resuming, earlier checkpoint files are cleared.
    fn open(dir: &Path, resume: bool) -> Result<Self, GenError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("rejected.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Checkpoint { dir: dir.to_path_buf(), rejected: BufWriter::new(file) })
    }

    fn corpus_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.jsonl"))
    }

    /// Replaces a setting's corpus file with `posts`.
    fn reset(&self, key: &str, posts: &[Post]) -> Result<(), GenError> {
        let path = self.corpus_path(key);
        let mut buf = Vec::new();
        write_jsonl(posts, &mut buf).map_err(io_err(&path))?;
        write_atomic(&path, &buf)
    }

    /// Appends a batch, then replaces the ledger. A crash in between leaves
    /// extra lines that resuming truncates away.
    fn save(&mut self, key: &str, posts: &[Post], ledger: &RunLedger, rejections: &[(u64, &Rejection)]) -> Result<(), GenError> {
        let rpath = self.dir.join("rejected.jsonl");
        for (batch, r) in rejections {
            let line = json!({ "setting": key, "batch": batch, "kind": r.kind, "raw": r.raw });
            writeln!(self.rejected, "{line}").map_err(io_err(&rpath))?;
        }
        self.rejected.flush().map_err(io_err(&rpath))?;
        let path = self.corpus_path(key);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        write_jsonl(posts, BufWriter::new(file)).map_err(io_err(&path))?;
        let ledger_json = serde_json::to_vec_pretty(ledger).expect("ledger serialises");
        write_atomic(&self.dir.join("ledger.json"), &ledger_json)
    }
}

/// Generates `target_per_platform` posts for every setting of `plan`.
///
/// Settings run one after another and batches within a setting run in
/// order, so output depends only on the plan, the source corpus, the
/// templates and the provider's replies.
pub fn run_generation(
    plan: &RunPlan,
    source: &Corpus,
    provider: &dyn ChatProvider,
    templates: &TemplateSet,
    options: &RunOptions,
) -> Result<RunOutput, GenError> {
    plan.validate()?;
    for platform in &plan.platforms {
        let found = source.platform_posts(platform).count();
        if found < EXAMPLES_PER_PROMPT {
            return Err(PromptError::InsufficientPosts {
                platform: platform.to_string(),
                needed: EXAMPLES_PER_PROMPT,
                found,
            }
            .into());
        }
    }
    let fingerprint = plan.fingerprint(source, templates);
    let throttle = Throttle::new(options.policy.inter_call_delay);

    let mut checkpoint = options.out_dir.as_deref().map(|d| Checkpoint::open(d, options.resume)).transpose()?;
    let mut ledger = RunLedger { fingerprint: fingerprint.clone(), provider: provider.id(), settings: BTreeMap::new() };
    let mut corpora: BTreeMap<String, Corpus> = BTreeMap::new();

    if options.resume {
        let dir = options
            .out_dir
            .as_deref()
            .ok_or_else(|| GenError::Plan("resume needs an output directory".into()))?;
        let ledger_path = dir.join("ledger.json");
        if ledger_path.exists() {
            let saved = RunLedger::load(&ledger_path)?;
            if saved.fingerprint != fingerprint {
                return Err(GenError::Checkpoint {
                    path: ledger_path,
                    reason: "plan, source or templates changed since the checkpoint was written".into(),
                });
            }
            for (key, entry) in &saved.settings {
                let path = dir.join(format!("{key}.jsonl"));
                let mut corpus = if entry.accepted > 0 && path.exists() {
                    load_corpus(&path, CorpusFormat::Jsonl)?.corpus
                } else {
                    Corpus::default()
                };
                if (corpus.len() as u64) < entry.accepted {
                    return Err(GenError::Checkpoint {
                        path,
                        reason: format!("ledger records {} posts, file holds {}", entry.accepted, corpus.len()),
                    });
                }
                corpus.posts.truncate(entry.accepted as usize);
                corpus.provenance.clear();
                if let Some(cp) = &checkpoint {
                    cp.reset(key, &corpus.posts)?;
                }
                corpora.insert(key.clone(), corpus);
            }
            ledger.settings = saved.settings;
        }
    }

    let params_base = GenParams {
        temperature: 1.0,
        top_p: 1.0,
        model_name: plan.model_name.clone(),
        max_tokens: plan.max_tokens,
    };
    let target = plan.target_per_platform as u64;
    let mut batches_run = 0u64;
    let mut complete = true;

    'settings: for setting in plan.settings() {
        let key = setting.key();
        let params = GenParams { temperature: setting.temperature, top_p: setting.top_p, ..params_base.clone() };
        ledger.settings.entry(key.clone()).or_insert_with(|| SettingLedger {
            template_hash: templates.get(setting.strategy).hash.clone(),
            ..SettingLedger::default()
        });
        if !corpora.contains_key(&key) {
            if let Some(cp) = &checkpoint {
                cp.reset(&key, &[])?;
            }
            corpora.insert(key.clone(), Corpus::default());
        }

        loop {
            let entry = &ledger.settings[&key];
            if entry.accepted >= target {
                break;
            }
            if options.max_batches.is_some_and(|m| batches_run >= m) {
                complete = false;
                break 'settings;
            }
            let started = Instant::now();
            let batch = entry.next_batch;
            let count = (target - entry.accepted).min(OUTPUTS_PER_CALL as u64) as usize;
            let outcome = generate_batch(
                source,
                &setting,
                &params,
                count,
                batch,
                setting.batch_seed(plan.run_seed, batch),
                plan.max_attempts,
                provider,
                templates,
                &options.policy,
                &throttle,
            )?;
            batches_run += 1;

            let entry = ledger.settings.get_mut(&key).expect("entry inserted above");
            entry.calls += outcome.calls;
            entry.overflow_events += outcome.overflow_events;
            entry.duplicates += outcome.duplicates;
            for r in &outcome.rejections {
                *entry.rejected.entry(r.kind).or_insert(0) += 1;
            }
            if outcome.abandoned() {
                entry.abandoned_batches += 1;
                entry.consecutive_abandoned += 1;
            } else {
                entry.consecutive_abandoned = 0;
            }
            entry.accepted += outcome.posts.len() as u64;
            entry.next_batch += 1;
            entry.complete = entry.accepted >= target;
            entry.elapsed_ms += started.elapsed().as_millis() as u64;
            let abandoned_run = entry.consecutive_abandoned;
            if let Some(cp) = checkpoint.as_mut() {
                let tagged: Vec<(u64, &Rejection)> = outcome.rejections.iter().map(|r| (batch, r)).collect();
                cp.save(&key, &outcome.posts, &ledger, &tagged)?;
            }
            corpora.get_mut(&key).expect("corpus inserted above").posts.extend(outcome.posts);
            if abandoned_run >= plan.max_consecutive_abandoned {
                return Err(GenError::TooManyAbandoned { setting: key, count: abandoned_run });
            }
        }
    }

    for (key, corpus) in &mut corpora {
        corpus.provenance.insert("setting".into(), key.clone());
        corpus.provenance.insert("template_hash".into(), ledger.settings[key].template_hash.clone());
        corpus.provenance.insert("provider".into(), ledger.provider.clone());
    }
    Ok(RunOutput { corpora, ledger, complete })
}
