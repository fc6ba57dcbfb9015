use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_uniform, squared_distance, EmbedSimError};
use crate::seeding::{mix_seed, rng_from_seed, DetRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Independent k-means++ starts; the lowest final WCSS wins, earliest
    /// restart on ties.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig { k, seed, max_iter: 300, restarts: 1 }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// WCSS after initial assignment and after every subsequent update.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        self.assignments.iter().for_each(|&a| sizes[a] += 1);
        sizes
    }
}

/// Within-cluster sum of squared distances for a given assignment.
pub fn wcss(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| squared_distance(p, &centroids[a])).sum()
}

/// Seeded k-means++ followed by Lloyd iterations, then single-point
/// (Hartigan) moves whenever relocating one point lowers the WCSS, with
/// Lloyd and Hartigan phases alternating until neither changes anything.
///
/// Lloyd ties keep a point in its current cluster. A cluster left empty is
/// reseeded with the point farthest from its own centroid.
pub fn kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansResult, EmbedSimError> {
    check_uniform(points)?;
    let n = points.len();
    if config.k == 0 {
        return Err(EmbedSimError::ZeroK);
    }
    if config.k > n {
        return Err(EmbedSimError::TooManyClusters { k: config.k, n });
    }
    let restarts = config.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let seed = if restarts == 1 { config.seed } else { mix_seed(&[config.seed, r as u64]) };
            single_run(points, config.k, config.max_iter, seed)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, next| if next.wcss < best.wcss { next } else { best })
        .expect("at least one restart");
    Ok(best)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut DetRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // every remaining point coincides with a centre; take any unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

fn nearest(point: &[f64], centroids: &[Vec<f64>], current: Option<usize>) -> usize {
    let mut best = current.unwrap_or(0);
    let mut best_d = squared_distance(point, &centroids[best]);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// Moves the farthest-from-centroid points into empty clusters.
fn reseed_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize], counts: &mut [usize]) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| {
                let di = squared_distance(&points[i], &centroids[assignments[i]]);
                let dj = squared_distance(&points[j], &centroids[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .expect("k <= n leaves a cluster with two members");
        counts[assignments[donor]] -= 1;
        assignments[donor] = empty;
        counts[empty] = 1;
        centroids[empty] = points[donor].clone();
    }
}

/// One pass of single-point moves. Returns whether anything moved.
fn hartigan_pass(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize], counts: &mut [usize]) -> bool {
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let from = assignments[i];
        let n_from = counts[from] as f64;
        if counts[from] < 2 {
            continue;
        }
        let removal_gain = n_from / (n_from - 1.0) * squared_distance(p, &centroids[from]);
        let mut best: Option<(usize, f64)> = None;
        for (to, c) in centroids.iter().enumerate() {
            if to == from {
                continue;
            }
            let n_to = counts[to] as f64;
            let cost = n_to / (n_to + 1.0) * squared_distance(p, c);
            let delta = cost - removal_gain;
            if delta < -1e-12 * (1.0 + removal_gain) && best.is_none_or(|(_, d)| delta < d) {
                best = Some((to, delta));
            }
        }
        if let Some((to, _)) = best {
            let n_to = counts[to] as f64;
            for (c, v) in centroids[from].iter_mut().zip(p) {
                *c = (*c * n_from - v) / (n_from - 1.0);
            }
            for (c, v) in centroids[to].iter_mut().zip(p) {
                *c = (*c * n_to + v) / (n_to + 1.0);
            }
            counts[from] -= 1;
            counts[to] += 1;
            assignments[i] = to;
            moved = true;
        }
    }
    moved
}

fn single_run(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> KMeansResult {
    let dim = points[0].len();
    let mut rng = rng_from_seed(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids, None)).collect();
    let mut history = vec![wcss(points, &centroids, &assignments)];
    let mut iterations = 0;

    loop {
        // Lloyd phase
        while iterations < max_iter {
            iterations += 1;
            let (new_centroids, mut counts) = means(points, &assignments, k, dim);
            for (c, (old, new)) in centroids.iter_mut().zip(new_centroids).enumerate() {
                if counts[c] > 0 {
                    *old = new;
                }
            }
            reseed_empty(points, &mut centroids, &mut assignments, &mut counts);
            let next: Vec<usize> =
                points.iter().zip(&assignments).map(|(p, &a)| nearest(p, &centroids, Some(a))).collect();
            let changed = next != assignments;
            assignments = next;
            history.push(wcss(points, &centroids, &assignments));
            if !changed {
                break;
            }
        }
        let (fresh, mut counts) = means(points, &assignments, k, dim);
        for (c, (old, new)) in centroids.iter_mut().zip(fresh).enumerate() {
            if counts[c] > 0 {
                *old = new;
            }
        }
        reseed_empty(points, &mut centroids, &mut assignments, &mut counts);
        if iterations >= max_iter {
            break;
        }
        // Hartigan phase
        let mut any = false;
        while hartigan_pass(points, &mut centroids, &mut assignments, &mut counts) {
            any = true;
            let (exact, _) = means(points, &assignments, k, dim);
            centroids = exact;
            history.push(wcss(points, &centroids, &assignments));
        }
        if !any {
            break;
        }
    }

    let wcss_final = wcss(points, &centroids, &assignments);
    if history.last() != Some(&wcss_final) {
        history.push(wcss_final);
    }
    KMeansResult { centroids, assignments, wcss: wcss_final, wcss_history: history, iterations }
}
