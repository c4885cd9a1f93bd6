//! Dense vector kernels shared by clustering and pruning.
//!
//! The f32 kernels accumulate into eight fixed lanes that are combined in a
//! fixed order, so a given pair of slices always produces the same bits no
//! matter which thread evaluates it.

use crate::error::{Error, Result};

const LANES: usize = 8;

#[inline]
fn reduce(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Inner product of two equal-length slices.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += x * y;
    }
    reduce(acc)
}

/// Squared Euclidean distance.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = x - y;
        acc[l] += d * d;
    }
    reduce(acc)
}

/// L2 norm accumulated in f64.
pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Cosine similarity of two arbitrary non-zero vectors, in `[-1, 1]`.
pub fn cosine_similarity(p: &[f32], q: &[f32]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Numeric(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let (np, nq) = (norm(p), norm(q));
    if np == 0.0 || nq == 0.0 {
        return Err(Error::Numeric("cosine of a zero vector".into()));
    }
    let dot: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    Ok((dot / (np * nq)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two rows that are already L2-unit: their inner
/// product, clamped to `[-1, 1]`. Symmetric bit-for-bit.
#[inline]
pub fn unit_similarity(a: &[f32], b: &[f32]) -> f64 {
    f64::from(dot(a, b)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let v = [0.3f32, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Numeric(_))
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn lane_kernels_match_naive_sums() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive_dot: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        let naive_sq: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2))
            .sum();
        assert!((dot(&a, &b) as f64 - naive_dot).abs() < 1e-5);
        assert!((squared_l2(&a, &b) as f64 - naive_sq).abs() < 1e-5);
        assert_eq!(dot(&a, &b).to_bits(), dot(&b, &a).to_bits());
    }
}
