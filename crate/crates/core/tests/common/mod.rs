#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semprune::kmeans::{self, distance_to_centroid, KMeansConfig};
use semprune::linalg::unit_similarity;
use semprune::prune::{PruneManifest, Status};
use semprune::{ClusterModel, EmbeddingMatrix, GroundTruth, ItemManifest, SynthSpec};

/// Brute-force single-cluster reference: direct pairwise loops over every
/// ordered pair, no sorting, no precomputed scores.
///
/// Returns (status, kept row named by `duplicate_of`) per row.
#[allow(clippy::needless_range_loop)]
pub fn oracle_single_cluster(
    matrix: &EmbeddingMatrix,
    centroid: &[f32],
    epsilon: f64,
    eta: f64,
) -> Vec<(Status, Option<usize>)> {
    let n = matrix.n();
    let dist: Vec<f64> = (0..n)
        .map(|i| distance_to_centroid(matrix.row(i), centroid).unwrap())
        .collect();
    let outlier: Vec<bool> = dist.iter().map(|&d| d > epsilon).collect();
    let is_closer = |j: usize, i: usize| dist[j] < dist[i] || (dist[j] == dist[i] && j < i);

    let mut status = vec![Status::Kept; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if outlier[i] {
            status[i] = Status::Outlier;
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == i || outlier[j] || !is_closer(j, i) {
                continue;
            }
            let s = unit_similarity(matrix.row(i), matrix.row(j));
            if s > eta {
                status[i] = Status::Duplicate;
            }
            best = match best {
                None => Some((s, j)),
                Some((bs, bj)) if s > bs || (s == bs && is_closer(j, bj)) => Some((s, j)),
                keep => keep,
            };
        }
        if status[i] == Status::Duplicate {
            parent[i] = best.map(|(_, j)| j);
        }
    }
    (0..n)
        .map(|i| {
            if status[i] != Status::Duplicate {
                return (status[i], None);
            }
            let mut cur = parent[i].unwrap();
            while status[cur] == Status::Duplicate {
                cur = parent[cur].unwrap();
            }
            (status[i], Some(cur))
        })
        .collect()
}

/// Manifest reduced to (status, duplicate_of row).
pub fn manifest_rows(manifest: &PruneManifest, items: &ItemManifest) -> Vec<(Status, Option<usize>)> {
    let row_of = |id: &str| items.entries().iter().position(|e| e.item_id == id).unwrap();
    manifest
        .decisions
        .iter()
        .map(|d| (d.status, d.duplicate_of.as_deref().map(row_of)))
        .collect()
}

/// Random small instance drawn from the synthesizer family: clustered
/// points with optional exact/near duplicates and outliers.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (EmbeddingMatrix, ItemManifest, GroundTruth) {
    loop {
        let clusters = rng.random_range(1..=4usize);
        let per = rng.random_range(1..=max_n / clusters);
        let members = clusters * per;
        let size = rng.random_range(2..=3usize);
        let groups = if members >= size { rng.random_range(0..=members / size) } else { 0 };
        let outliers = rng.random_range(0..=3usize);
        if members + outliers > max_n || members + outliers < 2 {
            continue;
        }
        let noise = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 0.01,
            2 => 0.1,
            _ => 0.4,
        };
        let spec = SynthSpec {
            clusters,
            points_per_cluster: per,
            duplicate_groups: groups,
            duplicate_size: size,
            noise_sigma: noise,
            outlier_count: outliers,
            dim: rng.random_range(2..=24),
            seed: rng.random(),
        };
        return semprune::synth::synthesize(&spec).unwrap();
    }
}

/// A threshold either uniform in [-1, 1] or pinned to an observed pairwise
/// similarity, so boundary cases get exercised.
pub fn random_eta(rng: &mut ChaCha8Rng, m: &EmbeddingMatrix) -> f64 {
    if m.n() >= 2 && rng.random_bool(0.5) {
        let a = rng.random_range(0..m.n());
        let mut b = rng.random_range(0..m.n());
        if a == b {
            b = (b + 1) % m.n();
        }
        unit_similarity(m.row(a), m.row(b))
    } else {
        rng.random_range(-1.0..=1.0)
    }
}

pub fn fit_k1(m: &EmbeddingMatrix, seed: u64) -> ClusterModel {
    kmeans::fit(m, &KMeansConfig::with_k(1, seed)).unwrap()
}

/// Fraction of rows whose cluster label agrees with the planted label under
/// the best one-to-one relabeling (exhaustive over permutations, k ≤ 6).
pub fn best_label_agreement(found: &[usize], planted: &[usize], k: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let mut best = 0;
    for perm in permutations(k) {
        let hits = found.iter().zip(planted).filter(|(f, p)| perm[**f] == **p).count();
        best = best.max(hits);
    }
    best as f64 / found.len() as f64
}

pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
