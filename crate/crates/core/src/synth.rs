//! Deterministic synthetic embedding datasets with planted structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, ItemEntry, ItemManifest};

/// Per-coordinate noise added to planted duplicate copies.
pub const DUPLICATE_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub clusters: usize,
    pub points_per_cluster: usize,
    pub duplicate_groups: usize,
    pub duplicate_size: usize,
    pub noise_sigma: f64,
    pub outlier_count: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clusters: 4,
            points_per_cluster: 10,
            duplicate_groups: 0,
            duplicate_size: 2,
            noise_sigma: 0.05,
            outlier_count: 0,
            dim: 768,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn total(&self) -> usize {
        self.clusters * self.points_per_cluster + self.outlier_count
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Spec(format!("dim must be >= 2, got {}", self.dim)));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Spec(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.duplicate_groups > 0 {
            if self.duplicate_size < 2 {
                return Err(Error::Spec("duplicate_size must be >= 2".into()));
            }
            let need = self.duplicate_groups * self.duplicate_size;
            let have = self.clusters * self.points_per_cluster;
            if need > have {
                return Err(Error::Spec(format!(
                    "{need} duplicate slots requested but only {have} cluster points exist"
                )));
            }
        }
        Ok(())
    }
}

/// What the generator planted, for checking pruning results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Planted cluster per row; `None` for outliers.
    pub planted_cluster: Vec<Option<usize>>,
    /// Rows of each duplicate group, ascending; the first row is the source.
    pub duplicate_groups: Vec<Vec<usize>>,
    pub duplicate_group_ids: Vec<Vec<String>>,
    pub outliers: Vec<usize>,
    pub outlier_ids: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Vec<f32> {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / nrm) as f32).collect()
}

fn jittered(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f32> {
    let v: Vec<f64> = base
        .iter()
        .map(|&b| b + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    unit(&v)
}

/// Generates a normalized dataset: cluster members around random unit
/// centers, planted near-duplicate groups drawn from those members, and
/// uniformly random outliers appended after the cluster rows.
pub fn synthesize(spec: &SynthSpec) -> Result<(EmbeddingMatrix, ItemManifest, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let n_members = spec.clusters * spec.points_per_cluster;
    let n = spec.total();

    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            let g = gaussian(&mut rng, dim);
            let nrm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.into_iter().map(|x| x / nrm).collect()
        })
        .collect();

    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    let mut planted_cluster = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.points_per_cluster {
            rows.push(jittered(&mut rng, center, spec.noise_sigma));
            planted_cluster.push(Some(c));
        }
    }
    for _ in 0..spec.outlier_count {
        rows.push(unit(&gaussian(&mut rng, dim)));
        planted_cluster.push(None);
    }

    let mut duplicate_groups = Vec::with_capacity(spec.duplicate_groups);
    if spec.duplicate_groups > 0 {
        let mut order: Vec<usize> = (0..n_members).collect();
        order.shuffle(&mut rng);
        for chunk in order
            .chunks_exact(spec.duplicate_size)
            .take(spec.duplicate_groups)
        {
            let mut group = chunk.to_vec();
            group.sort_unstable();
            let source: Vec<f64> = rows[group[0]].iter().map(|&x| f64::from(x)).collect();
            for &r in &group[1..] {
                rows[r] = jittered(&mut rng, &source, DUPLICATE_JITTER);
            }
            duplicate_groups.push(group);
        }
    }

    let manifest = ItemManifest::new(
        (0..n)
            .map(|i| ItemEntry {
                item_id: format!("item-{i:06}"),
                source_uri: format!("synth://{}/{i}", spec.seed),
                row_index: i,
            })
            .collect(),
    )?;
    let values: Vec<f32> = rows.into_iter().flatten().collect();
    let matrix = EmbeddingMatrix::with_flag(n, dim, values, true)?;

    let duplicate_group_ids = duplicate_groups
        .iter()
        .map(|g| g.iter().map(|&r| manifest.id(r).to_string()).collect())
        .collect();
    let outliers: Vec<usize> = (n_members..n).collect();
    let outlier_ids = outliers.iter().map(|&r| manifest.id(r).to_string()).collect();
    let truth = GroundTruth {
        planted_cluster,
        duplicate_groups,
        duplicate_group_ids,
        outliers,
        outlier_ids,
    };
    Ok((matrix, manifest, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine_similarity;

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec {
            seed: 7,
            duplicate_groups: 3,
            outlier_count: 2,
            dim: 16,
            ..SynthSpec::default()
        };
        let (a, ma, ta) = synthesize(&spec).unwrap();
        let (b, mb, tb) = synthesize(&spec).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(ma, mb);
        assert_eq!(ta, tb);
        let other = synthesize(&SynthSpec { seed: 8, ..spec }).unwrap().0;
        assert_ne!(a.to_bytes().unwrap(), other.to_bytes().unwrap());
    }

    #[test]
    fn duplicate_bookkeeping() {
        let spec = SynthSpec {
            duplicate_groups: 2,
            duplicate_size: 3,
            dim: 8,
            ..SynthSpec::default()
        };
        let (m, _, truth) = synthesize(&spec).unwrap();
        assert_eq!(m.n(), 40);
        assert_eq!(truth.duplicate_group_ids.len(), 2);
        assert!(truth.duplicate_group_ids.iter().all(|g| g.len() == 3));
        let mut all: Vec<usize> = truth.duplicate_groups.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6, "groups must be disjoint");
    }

    #[test]
    fn zero_noise_duplicates_are_near_identical() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            duplicate_groups: 4,
            duplicate_size: 3,
            dim: 32,
            seed: 3,
            ..SynthSpec::default()
        };
        let (m, _, truth) = synthesize(&spec).unwrap();
        for g in &truth.duplicate_groups {
            for (i, &a) in g.iter().enumerate() {
                for &b in &g[i + 1..] {
                    let c = cosine_similarity(m.row(a), m.row(b)).unwrap();
                    assert!(c >= 0.999, "cos({a},{b}) = {c}");
                }
            }
        }
    }

    #[test]
    fn count_and_flag() {
        let spec = SynthSpec {
            clusters: 3,
            points_per_cluster: 5,
            outlier_count: 4,
            dim: 4,
            ..SynthSpec::default()
        };
        let (m, items, truth) = synthesize(&spec).unwrap();
        assert_eq!(m.n(), 19);
        assert_eq!(items.len(), 19);
        assert!(m.is_normalized());
        assert_eq!(truth.outliers, (15..19).collect::<Vec<_>>());
        assert!(truth.planted_cluster[15..].iter().all(Option::is_none));
    }

    #[test]
    fn invalid_specs() {
        let bad_dim = SynthSpec {
            dim: 1,
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize(&bad_dim), Err(Error::Spec(_))));
        let too_many = SynthSpec {
            duplicate_groups: 30,
            duplicate_size: 2,
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize(&too_many), Err(Error::Spec(_))));
    }
}
