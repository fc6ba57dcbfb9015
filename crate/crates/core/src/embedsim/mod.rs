//! Embedding-space statistics: cosine scores, top-k means, k-means and
//! exact t-SNE.

mod kmeans;
mod stream;
mod tsne;

pub use kmeans::{kmeans, wcss, KMeansConfig, KMeansResult};
pub use stream::{
    overall_mean, pairwise_cosine, pairwise_similarity, topk_mean, PairMode, ScoreAccumulator, SimilarityReport,
};
pub use tsne::{tsne_project, PointLabel, Projection2D, ProjectedPoint, TsneParams};

use thiserror::Error;

use crate::provider::EmbeddingVector;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedSimError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector {0} has zero norm")]
    ZeroVector(usize),
    #[error("score stream is empty")]
    EmptyStream,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot form {k} clusters from {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("all input points are identical")]
    Degenerate,
    #[error("{0} labels for {1} points")]
    LabelCount(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Cosine similarity clamped to [-1, 1]. Bitwise-equal inputs score exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (dot, na, nb) = a
        .iter()
        .zip(b)
        .fold((0.0, 0.0, 0.0), |(d, x, y), (&p, &q)| (d + p * q, x + p * p, y + q * q));
    scaled_cosine(dot, na.sqrt(), nb.sqrt(), a, b)
}

fn scaled_cosine(dot: f64, norm_a: f64, norm_b: f64, a: &[f64], b: &[f64]) -> f64 {
    let c = dot / (norm_a * norm_b);
    if c > 1.0 - 1e-9 && a == b {
        return 1.0;
    }
    c.clamp(-1.0, 1.0)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Checks that every vector has the same dimension and finite entries.
pub fn check_uniform(points: &[Vec<f64>]) -> Result<usize, EmbedSimError> {
    let dim = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != dim {
            return Err(EmbedSimError::DimensionMismatch { expected: dim, found: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(EmbedSimError::NonFinite);
        }
    }
    Ok(dim)
}

/// Raw coordinates of a batch of embeddings.
pub fn vectors_of(embeddings: &[EmbeddingVector]) -> Vec<Vec<f64>> {
    embeddings.iter().map(|e| e.values.clone()).collect()
}
