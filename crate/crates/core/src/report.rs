//! Fidelity report assembly and rendering.
//!
//! A report holds only serialised analysis results, so rendering never
//! recomputes anything and the same report always renders to the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{LexicalTable, SentimentSection, SimilaritySection, TopicSection};
use crate::textlex::Family;

const NOT_RUN: &str = "_not run_";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no analyses")]
    NoAnalyses,
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read report {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    CsvBundle,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" | "csv-bundle" => Ok(ReportFormat::CsvBundle),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (markdown, csv-bundle, json)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Seeds, thresholds, model and template identifiers.
    pub metadata: BTreeMap<String, String>,
    pub lexical: Option<Vec<LexicalTable>>,
    pub sentiment: Option<SentimentSection>,
    pub topics: Option<TopicSection>,
    pub similarity: Option<SimilaritySection>,
}

impl FidelityReport {
    pub fn has_analyses(&self) -> bool {
        self.lexical.is_some() || self.sentiment.is_some() || self.topics.is_some() || self.similarity.is_some()
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let err = |reason: String| ReportError::Read { path: path.to_path_buf(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Synthetic corpus fidelity report\n\n## Run metadata\n\n| Key | Value |\n|---|---|\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(md, "| {} | {} |", k, md_escape(v));
        }

        md.push_str("\n## Lexical features\n\nCells are `mean per post (distinct tokens)`.\n\n");
        match &self.lexical {
            None => md.push_str(&format!("{NOT_RUN}\n")),
            Some(tables) => {
                for t in tables {
                    let _ = writeln!(md, "### {}\n", t.platform);
                    md.push_str("| Scenario | Posts |");
                    for f in Family::ALL {
                        let _ = write!(md, " {} |", f.label());
                    }
                    md.push_str("\n|---|---:|---:|---:|---:|---:|\n");
                    for r in &t.rows {
                        let _ = write!(md, "| {} | {} |", r.scenario, r.posts);
                        for f in Family::ALL {
                            let _ = write!(md, " {} |", r.cells.get(&f).map_or_else(|| "-".into(), |c| c.render()));
                        }
                        md.push('\n');
                    }
                    md.push('\n');
                }
            }
        }

        md.push_str("\n## Sentiment\n\n");
        match &self.sentiment {
            None => md.push_str(&format!("{NOT_RUN}\n")),
            Some(s) => {
                let _ = writeln!(md, "Classifier: `{}`. Percentages of posts.\n", s.classifier_id);
                md.push_str("| Platform | Scenario | Negative | Neutral | Positive | n |\n|---|---|---:|---:|---:|---:|\n");
                for r in &s.rows {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {:.2} | {:.2} | {:.2} | {} |",
                        r.platform, r.scenario, r.negative, r.neutral, r.positive, r.n
                    );
                }
            }
        }

        md.push_str("\n## Topics\n\n");
        match &self.topics {
            None => md.push_str(&format!("{NOT_RUN}\n")),
            Some(t) => {
                let _ = writeln!(md, "Minimum topic size {}, overlap threshold {:.2}.\n", t.min_topic_size, t.threshold);
                md.push_str("| Platform | Scenario | Topics | Outliers |\n|---|---|---:|---:|\n");
                for c in &t.corpora {
                    let _ = writeln!(md, "| {} | {} | {} | {} |", c.platform, c.scenario, c.model.topics.len(), c.model.outlier_post_ids.len());
                }
                for c in t.corpora.iter().filter(|c| !c.model.topics.is_empty()) {
                    let _ = writeln!(md, "\n### {} {}\n", c.platform, c.scenario);
                    for topic in &c.model.topics {
                        let name = topic.name.as_deref().map(|n| format!(" {}", md_escape(n))).unwrap_or_default();
                        let _ = writeln!(md, "- Topic {}{} ({} posts): {}", topic.id, name, topic.size, md_escape(&topic.top_words.join(", ")));
                    }
                }
                md.push_str("\n### Topic overlap\n\n| A | B | Topics A | Topics B | Shared pairs | Disjoint A | Disjoint B |\n|---|---|---:|---:|---:|---:|---:|\n");
                for o in &t.overlaps {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} | {} | {} | {} |",
                        o.a, o.b, o.topics_a, o.topics_b, o.shared_pairs, o.disjoint_a, o.disjoint_b
                    );
                }
                if t.naming_failures > 0 {
                    let _ = writeln!(md, "\n{} topics could not be named.", t.naming_failures);
                }
            }
        }

        md.push_str("\n## Embedding similarity\n\n");
        match &self.similarity {
            None => md.push_str(&format!("{NOT_RUN}\n")),
            Some(s) => {
                let _ = writeln!(md, "Real versus synthetic cosine similarity; top-{} mean and overall average.\n", s.k);
                let _ = writeln!(md, "| Platform | Strategy | Top-{} | Average |\n|---|---|---:|---:|", s.k);
                for r in &s.rows {
                    let _ = writeln!(md, "| {} | {} | {:.3} | {:.3} |", r.platform, r.strategy, r.top_k, r.average);
                }
            }
        }
        md
    }

    /// File name and contents of each CSV in the bundle.
    pub fn to_csv_bundle(&self) -> Vec<(String, String)> {
        let mut files = Vec::new();
        let mut meta = String::from("key,value\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(meta, "{},{}", csv_field(k), csv_field(v));
        }
        files.push(("metadata.csv".to_string(), meta));

        if let Some(tables) = &self.lexical {
            let mut out = String::from("Platform,Scenario,Posts");
            for f in Family::ALL {
                let _ = write!(out, ",{0} mean,{0} distinct,{0} cell", f.label());
            }
            out.push('\n');
            for t in tables {
                for r in &t.rows {
                    let _ = write!(out, "{},{},{}", csv_field(&t.platform), csv_field(&r.scenario), r.posts);
                    for f in Family::ALL {
                        match r.cells.get(&f) {
                            Some(c) => {
                                let _ = write!(out, ",{:.2},{},{}", c.mean, c.distinct, c.render());
                            }
                            None => out.push_str(",,,"),
                        }
                    }
                    out.push('\n');
                }
            }
            files.push(("lexical.csv".to_string(), out));
        }
        if let Some(s) = &self.sentiment {
            let mut out = String::from("Platform,Scenario,Negative,Neutral,Positive,n\n");
            for r in &s.rows {
                let _ = writeln!(
                    out,
                    "{},{},{:.2},{:.2},{:.2},{}",
                    csv_field(&r.platform),
                    csv_field(&r.scenario),
                    r.negative,
                    r.neutral,
                    r.positive,
                    r.n
                );
            }
            files.push(("sentiment.csv".to_string(), out));
        }
        if let Some(t) = &self.topics {
            let mut topics = String::from("Platform,Scenario,Topic,Name,Size,Top words\n");
            for c in &t.corpora {
                for topic in &c.model.topics {
                    let _ = writeln!(
                        topics,
                        "{},{},{},{},{},{}",
                        csv_field(&c.platform),
                        csv_field(&c.scenario),
                        topic.id,
                        csv_field(topic.name.as_deref().unwrap_or("")),
                        topic.size,
                        csv_field(&topic.top_words.join(" "))
                    );
                }
            }
            files.push(("topics.csv".to_string(), topics));
            let mut overlap = String::from("A,B,Topics A,Topics B,Shared pairs,Disjoint A,Disjoint B,Threshold\n");
            for o in &t.overlaps {
                let _ = writeln!(
                    overlap,
                    "{},{},{},{},{},{},{},{}",
                    csv_field(&o.a),
                    csv_field(&o.b),
                    o.topics_a,
                    o.topics_b,
                    o.shared_pairs,
                    o.disjoint_a,
                    o.disjoint_b,
                    t.threshold
                );
            }
            files.push(("overlap.csv".to_string(), overlap));
        }
        if let Some(s) = &self.similarity {
            files.push(("similarity.csv".to_string(), similarity_csv(s)));
        }
        files
    }
}

/// Similarity table with columns `Platform,Strategy,Top-k,Average`.
pub fn similarity_csv(section: &SimilaritySection) -> String {
    let mut out = String::from("Platform,Strategy,Top-k,Average\n");
    for r in &section.rows {
        let _ = writeln!(out, "{},{},{:.3},{:.3}", csv_field(&r.platform), csv_field(&r.strategy), r.top_k, r.average);
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

/// Writes the report in `format` under `dir`, returning the files written.
pub fn emit_report(report: &FidelityReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if !report.has_analyses() {
        return Err(ReportError::NoAnalyses);
    }
    let files = match format {
        ReportFormat::Markdown => vec![("report.md".to_string(), report.to_markdown())],
        ReportFormat::Json => vec![("report.json".to_string(), report.to_json())],
        ReportFormat::CsvBundle => report.to_csv_bundle(),
    };
    fs::create_dir_all(dir).map_err(|source| ReportError::Write { path: dir.to_path_buf(), source })?;
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| ReportError::Write { path: path.clone(), source })?;
            Ok(path)
        })
        .collect()
}
