use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_uniform, scaled_cosine, EmbedSimError};

#[derive(Debug, Clone, Copy)]
struct Score(f64);

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Running count, compensated sum and the `k` largest scores of a stream.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    k: usize,
    count: u64,
    sum: f64,
    comp: f64,
    top: BinaryHeap<Reverse<Score>>,
}

impl ScoreAccumulator {
    pub fn new(k: usize) -> Result<Self, EmbedSimError> {
        if k == 0 {
            return Err(EmbedSimError::ZeroK);
        }
        Ok(ScoreAccumulator { k, count: 0, sum: 0.0, comp: 0.0, top: BinaryHeap::with_capacity(k + 1) })
    }

    fn add_to_sum(&mut self, x: f64) {
        // Neumaier's variant of Kahan summation
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn offer(&mut self, score: f64) {
        if self.top.len() < self.k {
            self.top.push(Reverse(Score(score)));
        } else if let Some(Reverse(min)) = self.top.peek() {
            if score > min.0 {
                self.top.pop();
                self.top.push(Reverse(Score(score)));
            }
        }
    }

    pub fn push(&mut self, score: f64) {
        self.count += 1;
        self.add_to_sum(score);
        self.offer(score);
    }

    /// Folds another accumulator in; the result does not depend on how the
    /// stream was split beyond last-bit rounding of the sum.
    pub fn merge(&mut self, other: ScoreAccumulator) {
        self.count += other.count;
        self.add_to_sum(other.sum);
        self.comp += other.comp;
        for Reverse(s) in other.top {
            self.offer(s.0);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn overall_mean(&self) -> Result<f64, EmbedSimError> {
        if self.count == 0 {
            return Err(EmbedSimError::EmptyStream);
        }
        Ok((self.sum + self.comp) / self.count as f64)
    }

    /// Largest scores retained, in descending order.
    pub fn top_scores(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.top.iter().map(|Reverse(s)| s.0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// Mean of the `k` largest scores, summed in descending order. When the
    /// stream holds no more than `k` scores this is the overall mean.
    pub fn topk_mean(&self) -> Result<f64, EmbedSimError> {
        let mean = self.overall_mean()?;
        if self.k as u64 >= self.count {
            if (self.k as u64) > self.count {
                log::warn!("top-k of {} requested from {} scores; using the overall mean", self.k, self.count);
            }
            return Ok(mean);
        }
        let top = self.top_scores();
        let topk = top.iter().sum::<f64>() / top.len() as f64;
        // mathematically never below the mean; guard against last-bit rounding
        Ok(topk.max(mean))
    }
}

pub fn topk_mean(scores: impl IntoIterator<Item = f64>, k: usize) -> Result<f64, EmbedSimError> {
    let mut acc = ScoreAccumulator::new(k)?;
    scores.into_iter().for_each(|s| acc.push(s));
    acc.topk_mean()
}

/// Compensated arithmetic mean.
pub fn overall_mean(scores: impl IntoIterator<Item = f64>) -> Result<f64, EmbedSimError> {
    let mut acc = ScoreAccumulator::new(1)?;
    scores.into_iter().for_each(|s| acc.push(s));
    acc.overall_mean()
}

/// Which scores enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Every cross pair `(a, b)`.
    #[default]
    AllPairs,
    /// One score per row of `A`: its best match in `B`.
    PerPostMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub top_k_mean: f64,
    pub overall_mean: f64,
    pub k: usize,
    pub pair_count: u64,
    pub axes: (String, String),
    pub mode: PairMode,
}

fn norms(points: &[Vec<f64>], offset_for_errors: usize) -> Result<Vec<f64>, EmbedSimError> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(EmbedSimError::ZeroVector(offset_for_errors + i))
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn validate_pair(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), EmbedSimError> {
    if a.is_empty() || b.is_empty() {
        return Err(EmbedSimError::EmptyStream);
    }
    let da = check_uniform(a)?;
    let db = check_uniform(b)?;
    if da != db {
        return Err(EmbedSimError::DimensionMismatch { expected: da, found: db });
    }
    // B's indices follow A's in zero-vector errors
    Ok((norms(a, 0)?, norms(b, a.len())?))
}

/// Every cross-pair cosine, row-major, computed lazily.
pub fn pairwise_cosine<'a>(
    a: &'a [Vec<f64>],
    b: &'a [Vec<f64>],
) -> Result<impl Iterator<Item = f64> + 'a, EmbedSimError> {
    let (na, nb) = validate_pair(a, b)?;
    Ok((0..a.len()).flat_map(move |i| {
        let na_i = na[i];
        let nb = nb.clone();
        (0..b.len()).map(move |j| {
            let dot: f64 = a[i].iter().zip(&b[j]).map(|(p, q)| p * q).sum();
            scaled_cosine(dot, na_i, nb[j], &a[i], &b[j])
        })
    }))
}

/// Streams all cross-pair cosines between `a` and `b` in row blocks of
/// `chunk_rows`, keeping only running sums and the top `k` scores.
pub fn pairwise_similarity(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    k: usize,
    mode: PairMode,
    chunk_rows: usize,
    axes: (&str, &str),
) -> Result<SimilarityReport, EmbedSimError> {
    let (na, nb) = validate_pair(a, b)?;
    ScoreAccumulator::new(k)?;
    let chunk_rows = chunk_rows.max(1);
    let blocks: Vec<ScoreAccumulator> = a
        .par_chunks(chunk_rows)
        .enumerate()
        .map(|(block, rows)| {
            let mut acc = ScoreAccumulator::new(k).expect("k checked");
            for (r, row) in rows.iter().enumerate() {
                let i = block * chunk_rows + r;
                let scores = b.iter().zip(&nb).map(|(col, &n)| {
                    let dot: f64 = row.iter().zip(col).map(|(p, q)| p * q).sum();
                    scaled_cosine(dot, na[i], n, row, col)
                });
                match mode {
                    PairMode::AllPairs => scores.for_each(|s| acc.push(s)),
                    PairMode::PerPostMax => acc.push(scores.fold(f64::NEG_INFINITY, f64::max)),
                }
            }
            acc
        })
        .collect();
    let mut total = ScoreAccumulator::new(k)?;
    for block in blocks {
        total.merge(block);
    }
    let effective_k = (k as u64).min(total.count()) as usize;
    Ok(SimilarityReport {
        top_k_mean: total.topk_mean()?,
        overall_mean: total.overall_mean()?,
        k: effective_k,
        pair_count: total.count(),
        axes: (axes.0.to_string(), axes.1.to_string()),
        mode,
    })
}
