//! Few-shot prompt construction and validation of generation output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{sample_indices, Corpus, Platform, Post, StrategyKind};

/// Number of grounding examples per prompt.
pub const EXAMPLES_PER_PROMPT: usize = 3;
/// Posts requested per call, except for remainder batches.
pub const OUTPUTS_PER_CALL: usize = 3;

const AWARE_TEMPLATE: &str = include_str!("../assets/templates/aware.txt");
const AGNOSTIC_TEMPLATE: &str = include_str!("../assets/templates/agnostic.txt");

/// Replacement for platform names found inside example posts.
const PLATFORM_MASK: &str = "platform";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("need {needed} posts from {platform} to draw examples, found {found}")]
    InsufficientPosts { platform: String, needed: usize, found: usize },
    #[error("template {name}: {reason}")]
    Template { name: String, reason: String },
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Prompting strategy: name the target platform, or hide it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Strategy {
    Agnostic,
    Aware(Platform),
}

impl Strategy {
    pub fn for_kind(kind: StrategyKind, platform: &Platform) -> Self {
        match kind {
            StrategyKind::Agnostic => Strategy::Agnostic,
            StrategyKind::Aware => Strategy::Aware(platform.clone()),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Agnostic => StrategyKind::Agnostic,
            Strategy::Aware(_) => StrategyKind::Aware,
        }
    }
}

/// A prompt template: system role, instruction body and one-line summary,
/// with `{platform}`, `{count}` and `{mean_length}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub system: String,
    pub instruction: String,
    pub summary: String,
    /// Hex SHA-256 of the template source.
    pub hash: String,
}

impl Template {
    /// Parses `[system]` / `[instruction]` / `[summary]` sections. Lines
    /// starting with `#` before the first section are comments.
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let err = |reason: &str| PromptError::Template { name: name.to_string(), reason: reason.to_string() };
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in source.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') {
                let key = trimmed[1..trimmed.len() - 1].trim().to_string();
                sections.entry(key.clone()).or_default();
                current = Some(key);
            } else if let Some(key) = &current {
                sections.get_mut(key).expect("section exists").push(line);
            } else if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                return Err(err("text before the first section"));
            }
        }
        let mut take = |key: &str| {
            sections
                .remove(key)
                .map(|lines| lines.join("\n").trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| err(&format!("missing or empty [{key}] section")))
        };
        let system = take("system")?;
        let instruction = take("instruction")?;
        let summary = take("summary")?;
        if summary.contains('\n') {
            return Err(err("[summary] must be a single line"));
        }
        Ok(Template {
            name: name.to_string(),
            system,
            instruction,
            summary,
            hash: hex::encode(Sha256::digest(source.as_bytes())),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let source = std::fs::read_to_string(path)
            .map_err(|source| PromptError::TemplateIo { path: path.display().to_string(), source })?;
        let name = path.file_stem().map_or_else(|| "template".into(), |s| s.to_string_lossy().into_owned());
        Template::parse(&name, &source)
    }

    fn fill(text: &str, platform: Option<&Platform>, count: usize, mean_length: usize) -> String {
        let mut out = text.replace("{count}", &count.to_string()).replace("{mean_length}", &mean_length.to_string());
        if let Some(p) = platform {
            out = out.replace("{platform}", p.name());
        }
        out
    }
}

/// The pair of templates used by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub aware: Template,
    pub agnostic: Template,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            aware: Template::parse("aware", AWARE_TEMPLATE).expect("bundled aware template parses"),
            agnostic: Template::parse("agnostic", AGNOSTIC_TEMPLATE).expect("bundled agnostic template parses"),
        }
    }

    pub fn get(&self, kind: StrategyKind) -> &Template {
        match kind {
            StrategyKind::Aware => &self.aware,
            StrategyKind::Agnostic => &self.agnostic,
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

/// JSON shape the model must answer with: an array of exactly `count`
/// objects, each carrying a string `text` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputContract {
    pub count: usize,
}

impl OutputContract {
    pub fn schema(&self) -> Value {
        json!({
            "type": "array",
            "minItems": self.count,
            "maxItems": self.count,
            "items": {
                "type": "object",
                "required": ["text"],
                "properties": { "text": { "type": "string" } }
            }
        })
    }

    pub fn instruction(&self) -> String {
        let sample: Vec<Value> = (1..=self.count).map(|i| json!({ "text": format!("post {i}") })).collect();
        format!(
            "Return only a JSON array of exactly {} object(s), each with a single \"text\" field, for example: {}",
            self.count,
            Value::Array(sample)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

/// A fully instantiated few-shot prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub system_role: String,
    pub instruction_body: String,
    pub examples: Vec<String>,
    pub trailing_summary: String,
    pub output_contract: OutputContract,
    pub template_hash: String,
}

impl PromptSpec {
    /// The user turn: instruction, numbered examples, output contract and
    /// finally the one-line summary.
    pub fn user_message(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction_body);
        out.push_str("\n\n");
        for (i, example) in self.examples.iter().enumerate() {
            out.push_str(&format!("Example {}:\n{}\n\n", i + 1, example.trim()));
        }
        out.push_str(&self.output_contract.instruction());
        out.push('\n');
        out.push_str(&self.trailing_summary);
        out
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(&self.system_role), ChatMessage::user(self.user_message())]
    }

    /// System role and user turn joined by a blank line.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_role, self.user_message())
    }

    /// Rough token count (4 bytes per token) for ceiling checks.
    pub fn estimated_tokens(&self) -> usize {
        self.render().len().div_ceil(4)
    }
}

fn platform_name_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let names: Vec<String> = Platform::KNOWN.iter().map(|p| regex::escape(p.name())).collect();
        Regex::new(&format!("(?i){}", names.join("|"))).expect("platform pattern compiles")
    })
}

/// Replaces every case-insensitive occurrence of a known platform name
/// other than `keep` with a neutral word.
pub fn mask_platform_names(text: &str, keep: Option<&Platform>) -> String {
    platform_name_pattern()
        .replace_all(text, |caps: &regex::Captures| {
            let found = &caps[0];
            match keep {
                Some(p) if p.name().eq_ignore_ascii_case(found) => found.to_string(),
                _ => PLATFORM_MASK.to_string(),
            }
        })
        .into_owned()
}

/// Known platform names occurring in `text`, case-insensitively.
pub fn platform_mentions(text: &str) -> Vec<Platform> {
    let lower = text.to_lowercase();
    Platform::KNOWN
        .iter()
        .filter(|p| lower.contains(&p.name().to_lowercase()))
        .cloned()
        .collect()
}

/// Draws three distinct posts of `platform` uniformly, deterministically in `seed`.
pub fn select_examples(corpus: &Corpus, platform: &Platform, seed: u64) -> Result<Vec<Post>, PromptError> {
    let candidates: Vec<&Post> = corpus.platform_posts(platform).collect();
    if candidates.len() < EXAMPLES_PER_PROMPT {
        return Err(PromptError::InsufficientPosts {
            platform: platform.to_string(),
            needed: EXAMPLES_PER_PROMPT,
            found: candidates.len(),
        });
    }
    Ok(sample_indices(candidates.len(), EXAMPLES_PER_PROMPT, seed)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Instantiates the strategy's template for `examples`, asking for `count`
/// new posts.
///
/// Platform names inside example texts are masked so that an agnostic
/// prompt never names a platform and an aware prompt names only its target.
pub fn build_prompt(examples: &[Post], strategy: &Strategy, count: usize, templates: &TemplateSet) -> PromptSpec {
    let template = templates.get(strategy.kind());
    let target = match strategy {
        Strategy::Aware(p) => Some(p),
        Strategy::Agnostic => None,
    };
    let texts: Vec<String> = examples.iter().map(|p| mask_platform_names(&p.text, target)).collect();
    let mean_length = if texts.is_empty() {
        0
    } else {
        let total: usize = texts.iter().map(|t| t.trim().chars().count()).sum();
        (total as f64 / texts.len() as f64).round() as usize
    };
    PromptSpec {
        system_role: Template::fill(&template.system, target, count, mean_length),
        instruction_body: Template::fill(&template.instruction, target, count, mean_length),
        examples: texts,
        trailing_summary: Template::fill(&template.summary, target, count, mean_length),
        output_contract: OutputContract { count },
        template_hash: template.hash.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionKind {
    NotJson,
    WrongArity,
    MissingField,
    EmptyText,
}

impl fmt::Display for RejectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectionKind::NotJson => "not_json",
            RejectionKind::WrongArity => "wrong_arity",
            RejectionKind::MissingField => "missing_field",
            RejectionKind::EmptyText => "empty_text",
        })
    }
}

/// Generation output that broke the contract, with the payload kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("rejected generation output ({kind})")]
pub struct Rejection {
    pub kind: RejectionKind,
    pub raw: String,
}

/// Strips a surrounding Markdown code fence (with optional language tag).
fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return trimmed;
    };
    match body.find('\n') {
        Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

/// Accepts only a JSON array of exactly `expected` objects with non-empty
/// string `text` fields.
pub fn parse_generation_output(raw: &str, expected: usize) -> Result<Vec<String>, Rejection> {
    let reject = |kind| Rejection { kind, raw: raw.to_string() };
    let value: Value = serde_json::from_str(strip_code_fence(raw)).map_err(|_| reject(RejectionKind::NotJson))?;
    let Value::Array(items) = value else {
        return Err(reject(RejectionKind::NotJson));
    };
    if items.len() != expected {
        return Err(reject(RejectionKind::WrongArity));
    }
    items
        .iter()
        .map(|item| match item.get("text") {
            Some(Value::String(s)) if s.trim().is_empty() => Err(reject(RejectionKind::EmptyText)),
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(reject(RejectionKind::MissingField)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn posts(texts: &[&str], platform: Platform) -> Vec<Post> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Post::real(format!("e{i}"), platform.clone(), *t))
            .collect()
    }

    #[test]
    fn builtin_templates_parse() {
        let set = TemplateSet::builtin();
        assert_ne!(set.aware.hash, set.agnostic.hash);
        assert_eq!(set.aware.hash.len(), 64);
        assert!(set.agnostic.instruction.contains("similar in content and length"));
        assert!(set.aware.instruction.contains("keeping them true to their content and writing style"));
    }

    #[test]
    fn template_rejects_multiline_summary() {
        let src = "[system]\na\n[instruction]\nb\n[summary]\nline one\nline two\n";
        assert!(Template::parse("t", src).is_err());
        assert!(Template::parse("t", "[system]\na\n[summary]\nc\n").is_err());
    }

    #[test]
    fn aware_names_platform() {
        let ex = posts(&["one", "two", "three"], Platform::Twitter);
        let p = build_prompt(&ex, &Strategy::Aware(Platform::Twitter), 3, &TemplateSet::builtin());
        assert!(p.render().contains("Twitter"));
        assert_eq!(platform_mentions(&p.render()), vec![Platform::Twitter]);
    }

    #[test]
    fn agnostic_names_no_platform_even_from_examples() {
        let ex = posts(&["watch my YouTube video", "see reddit.com/r/x", "#TikTokMadeMeBuyIt"], Platform::TikTok);
        let p = build_prompt(&ex, &Strategy::Agnostic, 3, &TemplateSet::builtin());
        assert!(platform_mentions(&p.render()).is_empty(), "{}", p.render());
        assert!(p.render().contains("#platformMadeMeBuyIt"));
    }

    #[test]
    fn aware_masks_other_platforms_only() {
        let ex = posts(&["cross-posted from Instagram", "twitter thread", "plain"], Platform::Twitter);
        let p = build_prompt(&ex, &Strategy::Aware(Platform::Twitter), 3, &TemplateSet::builtin());
        assert_eq!(p.examples[0], "cross-posted from platform");
        assert_eq!(p.examples[1], "twitter thread");
    }

    #[test]
    fn summary_is_last_line() {
        let ex = posts(&["a", "b", "c"], Platform::Reddit);
        for strategy in [Strategy::Agnostic, Strategy::Aware(Platform::Reddit)] {
            let p = build_prompt(&ex, &strategy, 2, &TemplateSet::builtin());
            assert_eq!(p.render().lines().last().unwrap(), p.trailing_summary);
            assert!(p.render().contains("exactly 2 object(s)"));
        }
    }

    #[test]
    fn agnostic_embeds_mean_length() {
        let ex = posts(&["aaaa", "bbbbbb", "cccccccc"], Platform::Facebook);
        let p = build_prompt(&ex, &Strategy::Agnostic, 3, &TemplateSet::builtin());
        assert!(p.instruction_body.contains("average 6 characters"));
    }

    #[test]
    fn prompt_is_deterministic() {
        let ex = posts(&["x", "y", "z"], Platform::Instagram);
        let s = Strategy::Aware(Platform::Instagram);
        let t = TemplateSet::builtin();
        assert_eq!(build_prompt(&ex, &s, 3, &t).render(), build_prompt(&ex, &s, 3, &t).render());
    }

    #[test]
    fn select_exactly_three() {
        let corpus = Corpus::new(posts(&["a", "b", "c"], Platform::Twitter));
        let mut got: Vec<_> = select_examples(&corpus, &Platform::Twitter, 11).unwrap().into_iter().map(|p| p.text).collect();
        got.sort();
        assert_eq!(got, ["a", "b", "c"]);
    }

    #[test]
    fn select_is_deterministic_and_platform_filtered() {
        let mut all = posts(&["t0", "t1", "t2", "t3", "t4", "t5"], Platform::Twitter);
        all.extend(posts(&["r0", "r1"], Platform::Reddit).into_iter().map(|mut p| {
            p.id.push('r');
            p
        }));
        let corpus = Corpus::new(all);
        let a = select_examples(&corpus, &Platform::Twitter, 5).unwrap();
        let b = select_examples(&corpus, &Platform::Twitter, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.platform == Platform::Twitter));
        assert!(matches!(
            select_examples(&corpus, &Platform::Reddit, 5),
            Err(PromptError::InsufficientPosts { found: 2, .. })
        ));
    }

    #[test]
    fn parse_valid() {
        let got = parse_generation_output(r#"[{"text":"a"},{"text":"b"},{"text":"c"}]"#, 3).unwrap();
        assert_eq!(got, ["a", "b", "c"]);
    }

    #[test]
    fn parse_rejections() {
        let kind = |raw: &str| parse_generation_output(raw, 3).unwrap_err().kind;
        assert_eq!(kind(r#"[{"text":"a"},{"text":"b"}]"#), RejectionKind::WrongArity);
        assert_eq!(kind("Sure! Here are three posts about the election."), RejectionKind::NotJson);
        assert_eq!(kind(r#"{"text":"a"}"#), RejectionKind::NotJson);
        assert_eq!(kind(r#"[{"text":"a"},{"body":"b"},{"text":"c"}]"#), RejectionKind::MissingField);
        assert_eq!(kind(r#"[{"text":"a"},{"text":3},{"text":"c"}]"#), RejectionKind::MissingField);
        assert_eq!(kind(r#"[{"text":"a"},{"text":"  "},{"text":"c"}]"#), RejectionKind::EmptyText);
        let rej = parse_generation_output("nope", 3).unwrap_err();
        assert_eq!(rej.raw, "nope");
    }

    #[test]
    fn parse_strips_code_fence() {
        let fenced = "```json\n[{\"text\":\"a\"},{\"text\":\"b\"},{\"text\":\"c\"}]\n```";
        assert_eq!(parse_generation_output(fenced, 3).unwrap().len(), 3);
        let bare = "```\n[{\"text\":\"a\"}]\n```";
        assert_eq!(parse_generation_output(bare, 1).unwrap(), ["a"]);
        // fence around an invalid payload is still rejected
        let bad = "```json\n[{\"text\":\"a\"}]\n```";
        assert_eq!(parse_generation_output(bad, 3).unwrap_err().kind, RejectionKind::WrongArity);
    }

    proptest::proptest! {
        #[test]
        fn parser_is_total(raw in ".{0,200}") {
            let _ = parse_generation_output(&raw, 3);
        }

        #[test]
        fn agnostic_never_leaks(texts in proptest::collection::vec("(?i)(twitter|youtube|tiktok|reddit|facebook|instagram|[a-z #@]{0,12}){1,6}", 3)) {
            let ex: Vec<Post> = texts.iter().enumerate().map(|(i, t)| Post::real(i.to_string(), Platform::Reddit, t.clone())).collect();
            let p = build_prompt(&ex, &Strategy::Agnostic, 3, &TemplateSet::builtin());
            proptest::prop_assert!(platform_mentions(&p.render()).is_empty());
        }
    }
}
