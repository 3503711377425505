use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, squared_distance, KMeansParams};
use crate::am::FilterPattern;
use crate::error::{Error, Result};
use crate::par;

/// Cluster id of the locked cluster.
pub const LOCKED: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub clustered_ratio: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub layer: String,
    /// Number of non-locked clusters.
    pub k: usize,
    /// K of the k-means run that produced the partition.
    pub grid_k: usize,
    /// Filter index of each position in `assignment`.
    pub filters: Vec<usize>,
    /// Cluster id per filter; `LOCKED` for the locked cluster. Ids are
    /// numbered by each cluster's lowest filter index.
    pub assignment: Vec<i64>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances over non-locked filters.
    pub objective: f64,
    pub clustered_ratio: f64,
    pub theta: f64,
    pub seed: u64,
    pub grid: Vec<GridPoint>,
}

impl ClusterResult {
    pub fn members(&self, cluster: i64) -> Vec<usize> {
        self.assignment
            .iter()
            .zip(&self.filters)
            .filter(|(&a, _)| a == cluster)
            .map(|(_, &f)| f)
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        (0..self.k as i64).map(|c| self.members(c).len()).collect()
    }

    pub fn locked(&self) -> Vec<usize> {
        self.members(LOCKED)
    }
}

struct Candidate {
    k: usize,
    assignment: Vec<i64>,
    clusters: usize,
    clustered: usize,
    objective: f64,
}

fn flatten(p: &FilterPattern) -> Vec<f64> {
    p.pattern.data().iter().map(|&v| v as f64).collect()
}

/// Partition `live` points with k-means, then move singleton clusters to
/// the locked cluster.
fn candidate(points: &[Vec<f64>], live: &[usize], n: usize, k: usize, seed: u64, params: &KMeansParams) -> Result<Candidate> {
    let sub: Vec<Vec<f64>> = live.iter().map(|&i| points[i].clone()).collect();
    let r = kmeans(&sub, k, seed.wrapping_add(k as u64), params)?;
    // clusters with identical centroids are one functionality
    let canon: Vec<usize> = (0..k).map(|j| (0..=j).find(|&q| r.centroids[q] == r.centroids[j]).unwrap()).collect();
    let mut sizes = vec![0usize; k];
    for &a in &r.assignment {
        sizes[canon[a]] += 1;
    }
    let mut raw = vec![LOCKED; n];
    for (pos, &i) in live.iter().enumerate() {
        let c = canon[r.assignment[pos]];
        if sizes[c] >= 2 {
            raw[i] = c as i64;
        }
    }
    let mut objective = 0.0;
    for (pos, &i) in live.iter().enumerate() {
        if raw[i] != LOCKED {
            objective += squared_distance(&sub[pos], &r.centroids[r.assignment[pos]]);
        }
    }
    let assignment = renumber(&raw);
    let clusters = assignment.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let clustered = assignment.iter().filter(|&&a| a != LOCKED).count();
    Ok(Candidate { k, assignment, clusters, clustered, objective })
}

fn renumber(raw: &[i64]) -> Vec<i64> {
    let mut map: Vec<(i64, i64)> = Vec::new();
    raw.iter()
        .map(|&c| {
            if c == LOCKED {
                return LOCKED;
            }
            if let Some(&(_, id)) = map.iter().find(|(r, _)| *r == c) {
                return id;
            }
            let id = map.len() as i64;
            map.push((c, id));
            id
        })
        .collect()
}

/// Grid-search K over `1..=⌊I/2⌋` and keep the largest K whose clustered
/// ratio reaches `theta`; otherwise the K with the best ratio (larger K on
/// ties). Dead filters start in the locked cluster.
pub fn select_k_and_lock(patterns: &[FilterPattern], theta: f64, seed: u64, params: &KMeansParams) -> Result<ClusterResult> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("clustered-ratio threshold must be in (0, 1], got {theta}")));
    }
    let Some(first) = patterns.first() else {
        return Err(Error::Config("no patterns to cluster".into()));
    };
    let layer = first.layer.clone();
    if patterns.iter().any(|p| p.layer != layer) {
        return Err(Error::Config("patterns come from different layers".into()));
    }
    let n = patterns.len();
    let filters: Vec<usize> = patterns.iter().map(|p| p.filter).collect();
    let points: Vec<Vec<f64>> = patterns.iter().map(flatten).collect();
    let live: Vec<usize> = (0..n).filter(|&i| !patterns[i].dead).collect();

    let max_k = (n / 2).min(live.len());
    if live.len() < 2 || max_k == 0 {
        return Ok(ClusterResult {
            layer,
            k: 0,
            grid_k: 0,
            filters,
            assignment: vec![LOCKED; n],
            centroids: Vec::new(),
            objective: 0.0,
            clustered_ratio: 0.0,
            theta,
            seed,
            grid: Vec::new(),
        });
    }

    let candidates: Vec<Candidate> = par::map_range(max_k, |j| candidate(&points, &live, n, j + 1, seed, params))
        .into_iter()
        .collect::<Result<_>>()?;
    let ratio = |c: &Candidate| c.clustered as f64 / n as f64;
    let chosen = candidates
        .iter()
        .rev()
        .find(|c| ratio(c) >= theta)
        .or_else(|| {
            // largest ratio, larger K on ties
            candidates.iter().rev().fold(None::<&Candidate>, |best, c| match best {
                Some(b) if ratio(b) >= ratio(c) => Some(b),
                _ => Some(c),
            })
        })
        .expect("grid is nonempty");

    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; chosen.clusters];
    let mut counts = vec![0usize; chosen.clusters];
    for (i, &a) in chosen.assignment.iter().enumerate() {
        if a != LOCKED {
            counts[a as usize] += 1;
            for (s, v) in centroids[a as usize].iter_mut().zip(&points[i]) {
                *s += v;
            }
        }
    }
    for (c, &m) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= m as f64);
    }

    Ok(ClusterResult {
        layer,
        k: chosen.clusters,
        grid_k: chosen.k,
        filters,
        assignment: chosen.assignment.clone(),
        centroids,
        objective: chosen.objective,
        clustered_ratio: ratio(chosen),
        theta,
        seed,
        grid: candidates
            .iter()
            .map(|c| GridPoint { k: c.k, clustered_ratio: ratio(c), objective: c.objective })
            .collect(),
    })
}
