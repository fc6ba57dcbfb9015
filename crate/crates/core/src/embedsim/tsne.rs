use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_uniform, squared_distance, EmbedSimError};
use crate::seeding::rng_from_seed;

const MIN_POINTS: usize = 5;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const LEARNING_RATE: f64 = 200.0;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub seed: u64,
    /// Gradient steps after the exaggeration phase.
    pub iterations: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams { perplexity: 30.0, seed: 0, iterations: 750 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub cluster_id: usize,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub cluster_id: usize,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<ProjectedPoint>,
    /// Perplexity actually used, after clamping.
    pub perplexity: f64,
    pub seed: u64,
    /// `(iteration, KL divergence)` sampled after early exaggeration.
    pub kl_checkpoints: Vec<(usize, f64)>,
}

impl Projection2D {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,cluster,scenario\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.x, p.y, p.cluster_id, csv_field(&p.scenario));
        }
        out
    }

    /// Self-contained scatter plot, one colour per scenario label.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 600.0;
        const PAD: f64 = 40.0;
        const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
        let mut scenarios: Vec<&str> = self.points.iter().map(|p| p.scenario.as_str()).collect();
        scenarios.sort_unstable();
        scenarios.dedup();
        let (min_x, max_x) = bounds(self.points.iter().map(|p| p.x));
        let (min_y, max_y) = bounds(self.points.iter().map(|p| p.y));
        let scale = |v: f64, lo: f64, hi: f64| PAD + (v - lo) / (hi - lo).max(1e-12) * (SIZE - 2.0 * PAD);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for p in &self.points {
            let colour = PALETTE[scenarios.iter().position(|s| *s == p.scenario).unwrap_or(0) % PALETTE.len()];
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{colour}\" fill-opacity=\"0.8\"><title>{} / {}</title></circle>",
                scale(p.x, min_x, max_x),
                SIZE - scale(p.y, min_y, max_y),
                xml_escape(&p.scenario),
                p.cluster_id
            );
        }
        for (i, s) in scenarios.iter().enumerate() {
            let y = 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"8\" y=\"{:.0}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"22\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">{}</text>",
                y - 9.0,
                PALETTE[i % PALETTE.len()],
                y,
                xml_escape(s)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Conditional affinities of row `i` for precision `beta`, with distances
/// shifted by the row minimum; returns the row's entropy in nats.
fn row_affinities(d: &[f64], i: usize, beta: f64, row_min: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (&dij, o)) in d.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (dij - row_min)).exp() };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        if j != i {
            *o /= sum;
            weighted += *o * (d[j] - row_min);
        }
    }
    // H = ln(sum) + beta * E[d - row_min], using the unnormalised sum
    sum.ln() + beta * weighted
}

fn joint_probabilities(dist: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = dist.len();
    let target = perplexity.ln();
    let mut cond = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row_min = dist[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let spread = dist[i].iter().map(|v| v - row_min).fold(0.0, f64::max);
        let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for _ in 0..200 {
            let h = row_affinities(&dist[i], i, beta, row_min, &mut cond[i]);
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let denom = 2.0 * n as f64;
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { ((cond[i][j] + cond[j][i]) / denom).max(P_FLOOR) }).collect())
        .collect()
}

fn kl_divergence(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + sq2(&y[i], &y[j]));
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (1.0 / (1.0 + sq2(&y[i], &y[j])) / z).max(P_FLOOR);
                kl += p[i][j] * (p[i][j] / q).ln();
            }
        }
    }
    kl
}

fn sq2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Exact t-SNE into two dimensions.
///
/// Perplexity is clamped to `(N - 1) / 3`. Early exaggeration (×12) runs for
/// 250 steps with momentum 0.5, then `params.iterations` steps with momentum
/// 0.8; learning rate 200 with per-coordinate adaptive gains. After the
/// exaggeration phase a step that raises the KL divergence is undone, and
/// the learning rate halves with momentum and gains reset.
pub fn tsne_project(points: &[Vec<f64>], labels: &[PointLabel], params: &TsneParams) -> Result<Projection2D, EmbedSimError> {
    let n = points.len();
    if n < MIN_POINTS {
        return Err(EmbedSimError::TooFewPoints { needed: MIN_POINTS, found: n });
    }
    if labels.len() != n {
        return Err(EmbedSimError::LabelCount(labels.len(), n));
    }
    check_uniform(points)?;
    if points.iter().all(|p| p == &points[0]) {
        return Err(EmbedSimError::Degenerate);
    }
    let max_perplexity = (n as f64 - 1.0) / 3.0;
    let perplexity = if params.perplexity > max_perplexity || params.perplexity.is_nan() {
        log::warn!("perplexity {} too large for {n} points; using {max_perplexity:.3}", params.perplexity);
        max_perplexity
    } else {
        params.perplexity
    };
    if perplexity < 3.0 {
        log::warn!("perplexity {perplexity:.3} is below 3; the embedding may be noisy");
    }

    let dist: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| squared_distance(a, b)).collect()).collect();
    let p = joint_probabilities(&dist, perplexity);

    let mut rng = rng_from_seed(params.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![vec![0.0; n]; n];
    let mut kl_checkpoints = Vec::new();
    let total = EXAGGERATION_ITERS + params.iterations;
    let mut rate = LEARNING_RATE;
    let mut current_kl = f64::INFINITY;

    for iter in 0..total {
        let plain = iter >= EXAGGERATION_ITERS;
        let (exaggeration, momentum) = if plain { (1.0, 0.8) } else { (EXAGGERATION, 0.5) };
        if iter == EXAGGERATION_ITERS {
            current_kl = kl_divergence(&p, &y);
        }
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 1.0 / (1.0 + sq2(&y[i], &y[j]));
                num[i][j] = v;
                num[j][i] = v;
                z += 2.0 * v;
            }
        }
        let previous = plain.then(|| y.clone());
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i][j] - num[i][j] / z) * num[i][j];
                grad[0] += 4.0 * w * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * w * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let same_sign = (grad[d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(MIN_GAIN);
                update[i][d] = momentum * update[i][d] - rate * gains[i][d] * grad[d];
            }
        }
        for (yi, ui) in y.iter_mut().zip(&update) {
            yi[0] += ui[0];
            yi[1] += ui[1];
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for yi in y.iter_mut() {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        if let Some(old_y) = previous {
            let kl = kl_divergence(&p, &y);
            if kl <= current_kl {
                current_kl = kl;
            } else {
                // overshoot: undo the step, drop momentum, halve the rate
                y = old_y;
                gains.iter_mut().for_each(|g| *g = [1.0, 1.0]);
                update.iter_mut().for_each(|u| *u = [0.0, 0.0]);
                rate *= 0.5;
            }
        }
        let done = iter + 1;
        if plain && (done - EXAGGERATION_ITERS).is_multiple_of(KL_EVERY) {
            kl_checkpoints.push((done, current_kl));
        }
    }

    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(EmbedSimError::NonFinite);
    }
    Ok(Projection2D {
        points: y
            .iter()
            .zip(labels)
            .map(|(v, l)| ProjectedPoint { x: v[0], y: v[1], cluster_id: l.cluster_id, scenario: l.scenario.clone() })
            .collect(),
        perplexity,
        seed: params.seed,
        kl_checkpoints,
    })
}
