//! Deterministic k-means (k-means++ seeding, Lloyd iterations) over
//! L2-normalized embeddings.
//!
//! Output is bitwise reproducible for a fixed seed regardless of the rayon
//! pool size: per-row work is independent, and every reduction (seeding
//! weights, objective, centroid sums) runs in row-index order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::store::{self, EmbeddingMatrix};

/// Cluster count: a fixed value or the `round(sqrt(n/2))` heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KSpec {
    #[default]
    Auto,
    Fixed(usize),
}

impl KSpec {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KSpec::Auto => resolve_auto_k(n),
            KSpec::Fixed(k) => k,
        }
    }
}

impl fmt::Display for KSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KSpec::Auto => f.write_str("auto"),
            KSpec::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KSpec::Auto);
        }
        s.parse::<usize>()
            .map(KSpec::Fixed)
            .map_err(|_| format!("expected a cluster count or 'auto', got {s:?}"))
    }
}

impl Serialize for KSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KSpec::Auto => s.serialize_str("auto"),
            KSpec::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(k) => Ok(KSpec::Fixed(k)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: KSpec,
    pub max_iters: usize,
    /// Stop once the relative objective improvement drops below this.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: KSpec::Auto,
            max_iters: 100,
            rel_tol: 1e-4,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k: KSpec::Fixed(k),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::Config(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if self.k == KSpec::Fixed(0) {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// `max(1, round(sqrt(n / 2)))`, never more than `n`.
pub fn resolve_auto_k(n: usize) -> usize {
    let k = ((n as f64) / 2.0).sqrt().round() as usize;
    k.max(1).min(n)
}

/// Cosine distance `1 - cos(row, centroid)` for a unit-length `row`.
pub fn distance_to_centroid(row: &[f32], centroid: &[f32]) -> Result<f64> {
    if row.len() != centroid.len() {
        return Err(Error::Numeric(format!(
            "dimension mismatch: {} vs {}",
            row.len(),
            centroid.len()
        )));
    }
    let cn = linalg::norm(centroid);
    if cn == 0.0 {
        return Err(Error::Numeric("zero centroid".into()));
    }
    let dot: f64 = row
        .iter()
        .zip(centroid)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    Ok((1.0 - dot / cn).clamp(0.0, 2.0))
}

/// A fitted clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub d: usize,
    /// Row-major k×d.
    pub centroids: Vec<f32>,
    pub assignments: Vec<usize>,
    /// Sum of squared L2 distances of rows to their assigned centroid.
    pub objective: f64,
    /// Objective after the initial assignment and after each accepted
    /// Lloyd step; non-increasing.
    pub objective_history: Vec<f64>,
    pub iterations_run: usize,
    pub seed: u64,
}

/// The JSON dump of a cluster model (centroids go to a separate `.emb`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations_run: usize,
    pub sizes: Vec<usize>,
}

impl ClusterModel {
    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Member rows of every cluster, each list ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            k: self.k,
            seed: self.seed,
            objective: self.objective,
            iterations_run: self.iterations_run,
            sizes: self.sizes(),
        }
    }

    pub fn centroid_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.k, self.d, self.centroids.clone())
    }

    /// Writes `summary_path` (JSON) and `centroids_path` (`.emb`, k rows).
    pub fn dump(&self, summary_path: &Path, centroids_path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.summary())?;
        std::fs::write(summary_path, json).map_err(|e| Error::io(summary_path, e))?;
        store::save_embeddings(centroids_path, &self.centroid_matrix()?)
    }
}

fn check_input(matrix: &EmbeddingMatrix) -> Result<()> {
    if matrix.n() == 0 {
        return Err(Error::EmptyInput("k-means needs at least one row".into()));
    }
    if !matrix.is_normalized() {
        return Err(Error::Validation("k-means requires an L2-normalized matrix".into()));
    }
    Ok(())
}

/// Fits k-means with k-means++ seeding.
pub fn fit(matrix: &EmbeddingMatrix, config: &KMeansConfig) -> Result<ClusterModel> {
    config.validate()?;
    check_input(matrix)?;
    let k = config.k.resolve(matrix.n());
    if k > matrix.n() {
        return Err(Error::Config(format!("k = {k} exceeds n = {}", matrix.n())));
    }
    let init = seed_plus_plus(matrix, k, config.seed);
    lloyd(matrix, init, k, config)
}

/// Runs Lloyd iterations from caller-supplied initial centroids (k×d,
/// row-major). `config.k` is ignored; k is taken from the centroids.
pub fn fit_from(
    matrix: &EmbeddingMatrix,
    initial_centroids: Vec<f32>,
    config: &KMeansConfig,
) -> Result<ClusterModel> {
    config.validate()?;
    check_input(matrix)?;
    let d = matrix.d();
    if initial_centroids.is_empty() || !initial_centroids.len().is_multiple_of(d) {
        return Err(Error::Config(format!(
            "initial centroids length {} is not a positive multiple of d = {d}",
            initial_centroids.len()
        )));
    }
    let k = initial_centroids.len() / d;
    if k > matrix.n() {
        return Err(Error::Config(format!("k = {k} exceeds n = {}", matrix.n())));
    }
    lloyd(matrix, initial_centroids, k, config)
}

/// k-means++: first center uniform, then D²-weighted draws. Weight totals
/// are summed in row order; the cumulative scan picks the lowest row on ties.
fn seed_plus_plus(matrix: &EmbeddingMatrix, k: usize, seed: u64) -> Vec<f32> {
    let n = matrix.n();
    let d = matrix.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * d);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(matrix.row(first));
    let mut min_d2: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|i| linalg::squared_l2(matrix.row(i), matrix.row(first)))
        .collect();

    for _ in 1..k {
        let total: f64 = min_d2.iter().map(|&x| f64::from(x)).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0f64;
            let mut pick = None;
            let mut last_positive = None;
            for (i, &w) in min_d2.iter().enumerate() {
                if w <= 0.0 || chosen[i] {
                    continue;
                }
                last_positive = Some(i);
                acc += f64::from(w);
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive)
        } else {
            None
        };
        // All remaining mass is zero: fall back to the lowest unused row.
        let pick = pick.unwrap_or_else(|| chosen.iter().position(|c| !c).unwrap());
        chosen[pick] = true;
        let c = matrix.row(pick);
        centroids.extend_from_slice(c);
        min_d2
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m = m.min(linalg::squared_l2(matrix.row(i), c)));
    }
    centroids
}

fn nearest(row: &[f32], centroids: &[f32], d: usize) -> (usize, f32) {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dist = linalg::squared_l2(row, cen);
        if dist < best_d {
            best = c;
            best_d = dist;
        }
    }
    (best, best_d)
}

fn assign(matrix: &EmbeddingMatrix, centroids: &[f32]) -> (Vec<usize>, Vec<f32>) {
    let d = matrix.d();
    (0..matrix.n())
        .into_par_iter()
        .map(|i| nearest(matrix.row(i), centroids, d))
        .unzip()
}

/// Assigns rows, re-seeding any empty cluster at the row farthest from its
/// current centroid and reassigning, until no cluster is empty or k
/// rounds have passed.
fn assign_with_repair(
    matrix: &EmbeddingMatrix,
    centroids: &mut [f32],
    k: usize,
) -> (Vec<usize>, Vec<f32>) {
    let d = matrix.d();
    let (mut labels, mut dists) = assign(matrix, centroids);
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        for &a in &labels {
            sizes[a] += 1;
        }
        let empty: Vec<usize> = (0..k).filter(|&c| sizes[c] == 0).collect();
        if empty.is_empty() {
            break;
        }
        let mut taken = vec![false; matrix.n()];
        for c in empty {
            let mut far: Option<usize> = None;
            for i in 0..matrix.n() {
                if taken[i] || sizes[labels[i]] <= 1 {
                    continue;
                }
                if far.is_none_or(|f| dists[i] > dists[f]) {
                    far = Some(i);
                }
            }
            let Some(i) = far else { break };
            taken[i] = true;
            sizes[labels[i]] -= 1;
            sizes[c] += 1;
            centroids[c * d..(c + 1) * d].copy_from_slice(matrix.row(i));
        }
        (labels, dists) = assign(matrix, centroids);
    }
    (labels, dists)
}

fn objective(dists: &[f32]) -> f64 {
    dists.iter().map(|&x| f64::from(x)).sum()
}

/// Cluster means, each summed in f64 over members in row order. Empty
/// clusters keep their previous centroid.
fn update_centroids(matrix: &EmbeddingMatrix, labels: &[usize], prev: &[f32], k: usize) -> Vec<f32> {
    let d = matrix.d();
    let mut members = vec![Vec::new(); k];
    for (i, &a) in labels.iter().enumerate() {
        members[a].push(i);
    }
    let means: Vec<Vec<f32>> = members
        .par_iter()
        .enumerate()
        .map(|(c, rows)| {
            if rows.is_empty() {
                return prev[c * d..(c + 1) * d].to_vec();
            }
            let mut sum = vec![0.0f64; d];
            for &r in rows {
                for (s, &x) in sum.iter_mut().zip(matrix.row(r)) {
                    *s += f64::from(x);
                }
            }
            let count = rows.len() as f64;
            sum.into_iter().map(|s| (s / count) as f32).collect()
        })
        .collect();
    means.concat()
}

fn lloyd(
    matrix: &EmbeddingMatrix,
    mut centroids: Vec<f32>,
    k: usize,
    config: &KMeansConfig,
) -> Result<ClusterModel> {
    let (mut labels, dists) = assign_with_repair(matrix, &mut centroids, k);
    let mut obj = objective(&dists);
    let mut history = vec![obj];
    let mut iterations = 0;

    while iterations < config.max_iters {
        let mut next = update_centroids(matrix, &labels, &centroids, k);
        let (next_labels, next_dists) = assign_with_repair(matrix, &mut next, k);
        let next_obj = objective(&next_dists);
        iterations += 1;
        // Rounding the means to f32 can nudge a converged objective upward;
        // keep the last non-increasing state.
        if next_obj > obj {
            break;
        }
        let improvement = obj - next_obj;
        let prev = obj;
        centroids = next;
        labels = next_labels;
        obj = next_obj;
        history.push(obj);
        if prev == 0.0 || improvement / prev < config.rel_tol {
            break;
        }
    }

    Ok(ClusterModel {
        k,
        d: matrix.d(),
        centroids,
        assignments: labels,
        objective: obj,
        objective_history: history,
        iterations_run: iterations,
        seed: config.seed,
    })
}
