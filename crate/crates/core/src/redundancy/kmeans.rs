//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { max_iters: 300, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after every Lloyd iteration of the kept run.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `params.restarts` seeded runs (lowest objective, earliest run on
/// ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!("k-means needs 1 ≤ K ≤ {} points, got K = {k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in dimension".into()));
    }
    let runs = par::map_range(params.restarts.max(1), |r| {
        let run_seed = seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        lloyd(points, k, run_seed, params.max_iters)
    });
    let mut best: Option<KMeansResult> = None;
    for r in runs {
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a centroid
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, c));
        }
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> KMeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let n = points.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; n];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut next, &mut centroids);
        let changed = next != assignment;
        assignment = next;

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        }
        let objective = within_ss(points, &assignment, &centroids);
        if let Some(&prev) = history.last() {
            debug_assert!(objective <= prev + 1e-9 * prev.abs().max(1.0), "k-means objective rose: {prev} -> {objective}");
        }
        history.push(objective);
        if !changed {
            break;
        }
    }
    let objective = *history.last().unwrap();
    KMeansResult { assignment, centroids, objective, history, iterations }
}

/// Give every empty cluster the point farthest from its centroid, taken from
/// clusters that keep at least one member.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("K ≤ N guarantees a donor cluster");
        assignment[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

pub fn within_ss(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(assignment).map(|(p, &a)| squared_distance(p, &centroids[a])).sum()
}
