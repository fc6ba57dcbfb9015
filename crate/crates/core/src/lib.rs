//! Few-shot synthetic social-media corpus generation and fidelity analytics.
//!
//! Modules follow the pipeline: load a [`corpus`], build prompts
//! ([`prompting`]), call a [`provider`], orchestrate generation
//! ([`genpipe`]), then compare real and synthetic corpora lexically
//! ([`textlex`]), by [`sentiment`], by topics ([`topicmod`]) and in
//! embedding space ([`embedsim`]). [`analysis`] and [`report`] tie the
//! results together.

pub mod analysis;
pub mod corpus;
pub mod embedsim;
pub mod genpipe;
pub mod prompting;
pub mod provider;
pub mod report;
pub mod seeding;
pub mod sentiment;
pub mod textlex;
pub mod topicmod;

pub use corpus::{Corpus, Platform, Post, ScenarioTag, StrategyKind};
pub use embedsim::{Projection2D, SimilarityReport};
pub use genpipe::{RunLedger, RunPlan};
pub use prompting::{PromptSpec, Strategy};
pub use provider::{EmbeddingVector, GenParams};
pub use report::FidelityReport;
pub use sentiment::{SentimentDistribution, SentimentLabel};
pub use textlex::{Family, LexicalProfile};
pub use topicmod::{OverlapMatrix, Topic};
