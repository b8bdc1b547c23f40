//! Exhaustive cross-set similarity audit.

use serde::{Deserialize, Serialize};

use crate::curation::DEDUP_THRESHOLD;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, FeatureMatrix, ZERO_NORM};

pub const LEAKAGE_THRESHOLD: f64 = DEDUP_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakPair {
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation over all pairs.
    pub std: f64,
    pub pairs: usize,
    pub threshold: f64,
    /// Every pair with cosine ≥ threshold, in row-major order.
    pub offending: Vec<LeakPair>,
}

impl LeakageReport {
    pub fn is_disjoint(&self) -> bool {
        self.max < self.threshold
    }

    pub fn verdict(&self) -> &'static str {
        if self.is_disjoint() {
            "disjoint"
        } else {
            "not-disjoint"
        }
    }
}

fn row_norms(x: &FeatureMatrix) -> Result<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            let n = norm(x.row(i));
            if n <= ZERO_NORM {
                Err(Error::ZeroVector { row: Some(i) })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Cosine of every `(a, b)` pair. Each value is computed exactly as
/// [`crate::linalg::cosine_slices`] computes it.
pub fn leakage_check(a: &FeatureMatrix, b: &FeatureMatrix, threshold: f64) -> Result<LeakageReport> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let na = row_norms(a)?;
    let nb = row_norms(b)?;
    let pairs = a.rows() * b.rows();
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut offending = Vec::new();
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            let c = (dot(ra, b.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0);
            max = max.max(c);
            sum += c;
            sum_sq += c * c;
            if c >= threshold {
                offending.push(LeakPair { a: i, b: j, cosine: c });
            }
        }
    }
    let mean = sum / pairs as f64;
    let var = (sum_sq / pairs as f64 - mean * mean).max(0.0);
    Ok(LeakageReport {
        max,
        mean,
        std: var.sqrt(),
        pairs,
        threshold,
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine_slices;
    use crate::rng::SeededRng;

    #[test]
    fn orthogonal_sets_are_disjoint() {
        let a = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![0.0, 0.0, 2.0]]).unwrap();
        let r = leakage_check(&a, &b, LEAKAGE_THRESHOLD).unwrap();
        assert_eq!(r.max, 0.0);
        assert_eq!(r.verdict(), "disjoint");
        assert_eq!(LEAKAGE_THRESHOLD, 0.95);
    }

    #[test]
    fn planted_pair_is_flagged() {
        let theta = 0.96f64.acos();
        let a = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![0.0, -1.0, 0.0], vec![theta.cos(), theta.sin(), 0.0]]).unwrap();
        let r = leakage_check(&a, &b, 0.95).unwrap();
        assert_eq!(r.verdict(), "not-disjoint");
        assert_eq!(r.offending.len(), 1);
        assert_eq!((r.offending[0].a, r.offending[0].b), (0, 1));
        assert!((r.offending[0].cosine - 0.96).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = SeededRng::new(8);
        let a = FeatureMatrix::new(60, 5, (0..300).map(|_| rng.normal()).collect()).unwrap();
        let b = FeatureMatrix::new(40, 5, (0..200).map(|_| rng.normal()).collect()).unwrap();
        let r = leakage_check(&a, &b, 0.9).unwrap();
        let mut max = f64::NEG_INFINITY;
        for i in 0..60 {
            for j in 0..40 {
                max = max.max(cosine_slices(a.row(i), b.row(j)).unwrap());
            }
        }
        assert_eq!(r.max.to_bits(), max.to_bits());
        assert_eq!(r.pairs, 2400);
    }

    #[test]
    fn errors() {
        let a = FeatureMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(leakage_check(&a, &b, 0.95), Err(Error::DimensionMismatch { .. })));
        let z = FeatureMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(leakage_check(&a, &z, 0.95), Err(Error::ZeroVector { row: Some(0) })));
    }
}
