//! Outlier removal and semantic deduplication within k-means clusters.
//!
//! Per cluster, every member whose cosine distance to the centroid exceeds
//! `epsilon` is an outlier. Among the remaining members, every pair with
//! cosine similarity above `eta` deletes its member farther from the
//! centroid (equal distances: the higher row index goes). Deleted members
//! still take part in later comparisons, so an item survives exactly when
//! no closer member of its cluster is more than `eta`-similar to it. That
//! makes the retained count non-decreasing in `eta`, which the η sweep
//! relies on.
//!
//! The pair scan runs once per cluster and records, for each member, the
//! highest similarity to any closer member ([`DedupScores`]). Any `eta` can
//! then be applied in O(n).

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{distance_to_centroid, ClusterModel, KMeansConfig};
use crate::linalg;
use crate::store::{EmbeddingMatrix, ItemManifest};

pub use crate::linalg::cosine_similarity;

pub const MANIFEST_VERSION: u32 = 1;

/// `duplicate_of` value used by the random baseline.
pub const RANDOM_SENTINEL: &str = "RANDOM";

/// Bisection budget for [`sweep_eta`].
pub const MAX_SWEEP_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Cosine-distance outlier threshold, in `[0, 2]`.
    pub epsilon: f64,
    /// Pairwise cosine-similarity duplicate threshold, in `[-1, 1]`.
    pub eta: f64,
    pub max_iterations: usize,
    pub kmeans: KMeansConfig,
}

pub const DEFAULT_EPSILON: f64 = 0.9;

impl PruneConfig {
    pub fn new(epsilon: f64, eta: f64) -> Self {
        PruneConfig {
            epsilon,
            eta,
            max_iterations: 1,
            kmeans: KMeansConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 2], got {}", self.epsilon)));
        }
        if !(-1.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must be in [-1, 1], got {}", self.eta)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        self.kmeans.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Kept,
    Outlier,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    #[serde(rename = "id")]
    pub item_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    /// `None` only for the random baseline, which does not cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(rename = "dist", default, skip_serializing_if = "Option::is_none")]
    pub dist_to_centroid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSummary {
    pub k: usize,
    pub objective: f64,
    pub seed: u64,
}

impl From<&ClusterModel> for KMeansSummary {
    fn from(m: &ClusterModel) -> Self {
        KMeansSummary {
            k: m.k,
            objective: m.objective,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ManifestConfig {
    Semantic(PruneConfig),
    Random { ratio: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneManifest {
    pub version: u32,
    pub config: ManifestConfig,
    pub retained: usize,
    pub retention_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmeans: Option<KMeansSummary>,
    pub decisions: Vec<PruneDecision>,
}

impl PruneManifest {
    fn assemble(
        decisions: Vec<PruneDecision>,
        config: ManifestConfig,
        kmeans: Option<KMeansSummary>,
    ) -> Self {
        let retained = decisions.iter().filter(|d| d.status == Status::Kept).count();
        let retention_ratio = if decisions.is_empty() {
            0.0
        } else {
            retained as f64 / decisions.len() as f64
        };
        PruneManifest {
            version: MANIFEST_VERSION,
            config,
            retained,
            retention_ratio,
            kmeans,
            decisions,
        }
    }

    pub fn kept_ids(&self) -> impl Iterator<Item = &str> {
        self.decisions
            .iter()
            .filter(|d| d.status == Status::Kept)
            .map(|d| d.item_id.as_str())
    }

    pub fn count(&self, status: Status) -> usize {
        self.decisions.iter().filter(|d| d.status == status).count()
    }

    /// One kept item id per line, in row order.
    pub fn write_keep_list<W: Write>(&self, mut w: W) -> Result<()> {
        for id in self.kept_ids() {
            writeln!(w, "{id}").map_err(|e| Error::io("<keep-list>", e))?;
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save_keep_list(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_keep_list(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Per-item results of the pair scan for a fixed `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupScores {
    pub epsilon: f64,
    pub dist: Vec<f64>,
    pub outlier: Vec<bool>,
    /// Highest similarity to a closer non-outlier member of the same
    /// cluster; `-inf` when there is none (and for outliers).
    pub max_closer_similarity: Vec<f64>,
    /// The closer member attaining `max_closer_similarity` (the closest one
    /// on ties).
    pub nearest_closer: Vec<Option<usize>>,
}

impl DedupScores {
    pub fn n(&self) -> usize {
        self.dist.len()
    }

    pub fn survivors_after_epsilon(&self) -> usize {
        self.outlier.iter().filter(|o| !**o).count()
    }

    pub fn retained_at(&self, eta: f64) -> usize {
        self.outlier
            .iter()
            .zip(&self.max_closer_similarity)
            .filter(|(o, s)| !**o && **s <= eta)
            .count()
    }

    pub fn retention_at(&self, eta: f64) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.retained_at(eta) as f64 / self.n() as f64
    }
}

fn check_consistency(
    matrix: &EmbeddingMatrix,
    items: &ItemManifest,
    clusters: &ClusterModel,
) -> Result<()> {
    if !matrix.is_normalized() {
        return Err(Error::Validation("pruning requires an L2-normalized matrix".into()));
    }
    if items.len() != matrix.n() {
        return Err(Error::Consistency(format!(
            "item manifest has {} entries, matrix has {} rows",
            items.len(),
            matrix.n()
        )));
    }
    if clusters.assignments.len() != matrix.n() || clusters.d != matrix.d() {
        return Err(Error::Consistency(format!(
            "cluster model covers {} rows of dimension {}, matrix is {}x{}",
            clusters.assignments.len(),
            clusters.d,
            matrix.n(),
            matrix.d()
        )));
    }
    if let Some(&bad) = clusters.assignments.iter().find(|&&a| a >= clusters.k) {
        return Err(Error::Consistency(format!("assignment {bad} out of range for k = {}", clusters.k)));
    }
    Ok(())
}

/// Pair scan over the `eligible` members of every cluster.
fn scan(
    matrix: &EmbeddingMatrix,
    clusters: &ClusterModel,
    dist: &[f64],
    eligible: &[bool],
) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = matrix.n();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); clusters.k];
    for i in 0..n {
        if eligible[i] {
            groups[clusters.assignments[i]].push(i);
        }
    }
    let per_cluster: Vec<Vec<(usize, f64, Option<usize>)>> = groups
        .into_par_iter()
        .map(|mut members| {
            members.sort_by(|&a, &b| {
                dist[a].total_cmp(&dist[b]).then(a.cmp(&b))
            });
            let mut out = Vec::with_capacity(members.len());
            for (pos, &i) in members.iter().enumerate() {
                let row = matrix.row(i);
                let mut best = f64::NEG_INFINITY;
                let mut best_j = None;
                for &j in &members[..pos] {
                    let s = linalg::unit_similarity(row, matrix.row(j));
                    if s > best {
                        best = s;
                        best_j = Some(j);
                    }
                }
                out.push((i, best, best_j));
            }
            out
        })
        .collect();

    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut nearest = vec![None; n];
    for (i, s, j) in per_cluster.into_iter().flatten() {
        max_sim[i] = s;
        nearest[i] = j;
    }
    (max_sim, nearest)
}

fn centroid_distances(matrix: &EmbeddingMatrix, clusters: &ClusterModel) -> Result<Vec<f64>> {
    (0..matrix.n())
        .into_par_iter()
        .map(|i| {
            let c = clusters.assignments[i];
            distance_to_centroid(matrix.row(i), clusters.centroid(c))
                .map_err(|e| Error::Numeric(format!("row {i}, cluster {c}: {e}")))
        })
        .collect()
}

/// Runs the outlier test and the pair scan for a given `epsilon`.
pub fn score(
    matrix: &EmbeddingMatrix,
    items: &ItemManifest,
    clusters: &ClusterModel,
    epsilon: f64,
) -> Result<DedupScores> {
    check_consistency(matrix, items, clusters)?;
    if !(0.0..=2.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must be in [0, 2], got {epsilon}")));
    }
    let dist = centroid_distances(matrix, clusters)?;
    let outlier: Vec<bool> = dist.iter().map(|&d| d > epsilon).collect();
    let eligible: Vec<bool> = outlier.iter().map(|o| !o).collect();
    let (max_closer_similarity, nearest_closer) = scan(matrix, clusters, &dist, &eligible);
    Ok(DedupScores {
        epsilon,
        dist,
        outlier,
        max_closer_similarity,
        nearest_closer,
    })
}

/// Applies `eta` to precomputed scores. `link[i]` is the member that
/// deleted `i`.
fn apply_eta(scores: &DedupScores, eta: f64) -> (Vec<Status>, Vec<Option<usize>>) {
    let n = scores.n();
    let mut status = vec![Status::Kept; n];
    let mut link = vec![None; n];
    for i in 0..n {
        if scores.outlier[i] {
            status[i] = Status::Outlier;
        } else if scores.max_closer_similarity[i] > eta {
            status[i] = Status::Duplicate;
            link[i] = scores.nearest_closer[i];
        }
    }
    (status, link)
}

/// Follows deletion links to the kept member at the end of each chain.
/// Links always point strictly closer, so chains terminate.
fn flatten_links(status: &[Status], link: &[Option<usize>]) -> Vec<Option<usize>> {
    (0..status.len())
        .map(|i| {
            if status[i] != Status::Duplicate {
                return None;
            }
            let mut cur = link[i].expect("duplicate without a link");
            while status[cur] == Status::Duplicate {
                cur = link[cur].expect("duplicate without a link");
            }
            Some(cur)
        })
        .collect()
}

fn build_decisions(
    items: &ItemManifest,
    clusters: &ClusterModel,
    dist: &[f64],
    status: &[Status],
    link: &[Option<usize>],
) -> Vec<PruneDecision> {
    let root = flatten_links(status, link);
    (0..status.len())
        .map(|i| PruneDecision {
            item_id: items.id(i).to_string(),
            status: status[i],
            duplicate_of: root[i].map(|r| items.id(r).to_string()),
            cluster: Some(clusters.assignments[i]),
            dist_to_centroid: Some(dist[i]),
        })
        .collect()
}

/// Outlier removal plus semantic deduplication, one manifest entry per row.
pub fn prune(
    matrix: &EmbeddingMatrix,
    items: &ItemManifest,
    clusters: &ClusterModel,
    config: &PruneConfig,
) -> Result<PruneManifest> {
    config.validate()?;
    let scores = score(matrix, items, clusters, config.epsilon)?;
    let (mut status, mut link) = apply_eta(&scores, config.eta);

    // Later passes rescan the survivors only; a pass that deletes nothing
    // is a fixed point.
    for _ in 1..config.max_iterations {
        let eligible: Vec<bool> = status.iter().map(|s| *s == Status::Kept).collect();
        let (max_sim, nearest) = scan(matrix, clusters, &scores.dist, &eligible);
        let mut deleted = false;
        for i in 0..status.len() {
            if eligible[i] && max_sim[i] > config.eta {
                status[i] = Status::Duplicate;
                link[i] = nearest[i];
                deleted = true;
            }
        }
        if !deleted {
            break;
        }
    }

    let decisions = build_decisions(items, clusters, &scores.dist, &status, &link);
    Ok(PruneManifest::assemble(
        decisions,
        ManifestConfig::Semantic(config.clone()),
        Some(KMeansSummary::from(clusters)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepStatus {
    /// Retention is within tolerance of the target.
    Converged,
    /// No tested η reached the tolerance window; the closest one is returned.
    Approximate,
    /// Even η = -1 keeps more than the target allows.
    Unreachable { floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub eta: f64,
    pub achieved: f64,
    pub status: SweepStatus,
    pub steps: usize,
    /// Retention at η = -1 and η = 1.
    pub floor: f64,
    pub ceiling: f64,
    pub manifest: PruneManifest,
}

impl SweepOutcome {
    pub fn is_flagged(&self) -> bool {
        self.status != SweepStatus::Converged
    }
}

/// Bisects η over `[-1, 1]` for the smallest tested value whose retention
/// is within `tolerance` of `target_ratio`. Uses `base.epsilon` and
/// `base.kmeans`; `base.eta` is ignored.
///
/// A target at or above the η = 1 retention returns η = 1.
pub fn sweep_eta(
    matrix: &EmbeddingMatrix,
    items: &ItemManifest,
    clusters: &ClusterModel,
    base: &PruneConfig,
    target_ratio: f64,
    tolerance: f64,
) -> Result<SweepOutcome> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Domain(format!("target ratio must be in (0, 1], got {target_ratio}")));
    }
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tolerance}")));
    }
    let scores = score(matrix, items, clusters, base.epsilon)?;
    let floor = scores.retention_at(-1.0);
    let ceiling = scores.retention_at(1.0);
    let within = |r: f64| (r - target_ratio).abs() <= tolerance;

    let (eta, status, steps) = if target_ratio >= ceiling {
        let st = if within(ceiling) {
            SweepStatus::Converged
        } else {
            SweepStatus::Approximate
        };
        (1.0, st, 0)
    } else if within(floor) {
        (-1.0, SweepStatus::Converged, 0)
    } else if floor > target_ratio {
        (-1.0, SweepStatus::Unreachable { floor }, 0)
    } else {
        // Invariant: retention(lo) < target - tol, retention(hi) >= target - tol.
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut best = None;
        let mut steps = 0;
        while steps < MAX_SWEEP_STEPS {
            steps += 1;
            let mid = 0.5 * (lo + hi);
            let r = scores.retention_at(mid);
            if r < target_ratio - tolerance {
                lo = mid;
            } else {
                hi = mid;
                if within(r) {
                    best = Some(mid);
                }
            }
        }
        match best {
            Some(eta) => (eta, SweepStatus::Converged, steps),
            None => {
                let (rl, rh) = (scores.retention_at(lo), scores.retention_at(hi));
                let eta = if (rl - target_ratio).abs() <= (rh - target_ratio).abs() {
                    lo
                } else {
                    hi
                };
                (eta, SweepStatus::Approximate, steps)
            }
        }
    };

    let config = PruneConfig {
        eta,
        max_iterations: 1,
        ..base.clone()
    };
    config.validate()?;
    let (status_vec, link) = apply_eta(&scores, eta);
    let decisions = build_decisions(items, clusters, &scores.dist, &status_vec, &link);
    let manifest = PruneManifest::assemble(
        decisions,
        ManifestConfig::Semantic(config),
        Some(KMeansSummary::from(clusters)),
    );
    Ok(SweepOutcome {
        eta,
        achieved: manifest.retention_ratio,
        status,
        steps,
        floor,
        ceiling,
        manifest,
    })
}

/// Random baseline: keeps `round(ratio * n)` rows sampled without
/// replacement.
pub fn prune_random(
    matrix: &EmbeddingMatrix,
    items: &ItemManifest,
    ratio: f64,
    seed: u64,
) -> Result<PruneManifest> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Domain(format!("ratio must be in [0, 1], got {ratio}")));
    }
    items.check_matches(matrix)?;
    let n = matrix.n();
    let keep = ((ratio * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, keep) {
        kept[i] = true;
    }
    let decisions = (0..n)
        .map(|i| PruneDecision {
            item_id: items.id(i).to_string(),
            status: if kept[i] { Status::Kept } else { Status::Duplicate },
            duplicate_of: (!kept[i]).then(|| RANDOM_SENTINEL.to_string()),
            cluster: None,
            dist_to_centroid: None,
        })
        .collect();
    Ok(PruneManifest::assemble(
        decisions,
        ManifestConfig::Random { ratio, seed },
        None,
    ))
}
