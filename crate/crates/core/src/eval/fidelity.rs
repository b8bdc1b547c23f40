//! Distribution distances between two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;
use crate::rng::SeededRng;

/// Eigenvalues above this negative bound are treated as rounding noise.
pub const EIGEN_FLOOR: f64 = -1e-8;
/// KID block size.
pub const KID_BLOCK: usize = 1000;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn from_features(x: &FeatureMatrix) -> Result<Self> {
        let n = x.rows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let d = x.dim();
        let m = DMatrix::from_row_slice(n, d, x.as_slice());
        let mean = DVector::from_iterator(d, m.column_iter().map(|c| c.sum() / n as f64));
        let mut centred = m;
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centred.transpose() * &centred / (n - 1) as f64;
        symmetrize(&mut cov);
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Principal square root of a symmetric PSD matrix, clamping small
/// negative eigenvalues to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between the Gaussian fits of two sets.
///
/// The trace of `(Σa Σb)^½` is taken as the trace of the PSD square root of
/// `Σa^½ Σb Σa^½`, which has the same eigenvalues.
pub fn fid(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let sa = GaussianStats::from_features(a)?;
    let sb = GaussianStats::from_features(b)?;
    Ok(fid_from_stats(&sa, &sb))
}

pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let diff = &a.mean - &b.mean;
    let root_a = sqrt_psd(&a.cov);
    let mut inner = &root_a * &b.cov * &root_a;
    symmetrize(&mut inner);
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig
        .eigenvalues
        .iter()
        .map(|&v| if v < EIGEN_FLOOR { 0.0 } else { v.max(0.0).sqrt() })
        .sum();
    let value = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    value.max(0.0)
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let s = crate::linalg::dot(x, y) / d + 1.0;
    s * s * s
}

/// Squared MMD under `k(x, y) = (xᵀy/d + 1)³` for one pair of blocks.
/// Within-set terms skip the diagonal; the cross term does too when the
/// blocks have equal size.
pub fn mmd2_block(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let within = |s: &[&[f64]]| {
        let mut sum = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    sum += poly_kernel(s[i], s[j]);
                }
            }
        }
        sum / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            if n == m && i == j {
                continue;
            }
            cross += poly_kernel(a[i], b[j]);
        }
    }
    let cross = if n == m {
        cross / (n * (n - 1)) as f64
    } else {
        cross / (n * m) as f64
    };
    within(a) + within(b) - 2.0 * cross
}

fn block_rows<'a>(perm: &[usize], x: &'a FeatureMatrix, j: usize, blocks: usize) -> Vec<&'a [f64]> {
    let len = perm.len();
    perm[j * len / blocks..(j + 1) * len / blocks]
        .iter()
        .map(|&i| x.row(i))
        .collect()
}

/// KID with the default block size.
pub fn kid(a: &FeatureMatrix, b: &FeatureMatrix, seed: u64) -> Result<f64> {
    kid_blocked(a, b, KID_BLOCK, seed)
}

/// Mean squared MMD over blocks of roughly `block` rows.
///
/// Rows are shuffled with `seed` (one shared permutation when the sets have
/// equal size) and cut into `max(1, min(|A|, |B|) / block)` contiguous blocks
/// per set.
pub fn kid_blocked(a: &FeatureMatrix, b: &FeatureMatrix, block: usize, seed: u64) -> Result<f64> {
    for x in [a, b] {
        if x.rows() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: x.rows(),
            });
        }
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if block < 2 {
        return Err(Error::InvalidArgument("KID block size must be at least 2".into()));
    }
    let (n, m) = (a.rows(), b.rows());
    let blocks = (n.min(m) / block).max(1);
    let mut rng = SeededRng::derive(seed, "kid-blocks");
    let mut perm_a: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm_a);
    let perm_b = if n == m {
        perm_a.clone()
    } else {
        let mut p: Vec<usize> = (0..m).collect();
        rng.shuffle(&mut p);
        p
    };
    let mut total = 0.0;
    for j in 0..blocks {
        let (ba, bb) = (block_rows(&perm_a, a, j, blocks), block_rows(&perm_b, b, j, blocks));
        total += mmd2_block(&ba, &bb);
    }
    Ok(total / blocks as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, d: usize, scale: f64, shift: f64, seed: u64) -> FeatureMatrix {
        let mut rng = SeededRng::new(seed);
        let data = (0..n * d).map(|_| shift + scale * rng.normal()).collect();
        FeatureMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let a = gaussian(300, 5, 1.0, 0.0, 1);
        assert!(fid(&a, &a).unwrap() <= 1e-8);
        assert!(kid(&a, &a, 0).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn point_masses_reduce_to_mean_distance() {
        let a = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![-1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((fid(&a, &b).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn commuting_covariances_closed_form() {
        // Exact covariances σ²I and 4σ²I via symmetric ± designs.
        let sigma: f64 = 0.7;
        let design = |s: f64| {
            let r = s * (3.0f64 / 4.0).sqrt();
            FeatureMatrix::from_rows(&[
                vec![r, r],
                vec![r, -r],
                vec![-r, r],
                vec![-r, -r],
            ])
            .unwrap()
        };
        let a = design(sigma);
        let b = design(2.0 * sigma);
        let sa = GaussianStats::from_features(&a).unwrap();
        assert!((sa.cov[(0, 0)] - sigma * sigma).abs() < 1e-12);
        assert!(sa.cov[(0, 1)].abs() < 1e-12);
        let expected = 2.0 * sigma * sigma;
        assert!((fid(&a, &b).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn fid_is_symmetric() {
        let a = gaussian(200, 4, 1.0, 0.0, 2);
        let b = gaussian(150, 4, 1.7, 0.3, 3);
        let (x, y) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        assert!((x - y).abs() <= 1e-6);
    }

    #[test]
    fn kid_matches_kernel_sum_oracle() {
        let a = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![2.0, 0.0], vec![0.5, -1.0], vec![0.0, 0.0]]).unwrap();
        let k = |x: &[f64], y: &[f64]| ((x[0] * y[0] + x[1] * y[1]) / 2.0 + 1.0).powi(3);
        let (mut kaa, mut kbb, mut kab) = (0.0, 0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    kaa += k(a.row(i), a.row(j));
                    kbb += k(b.row(i), b.row(j));
                    kab += k(a.row(i), b.row(j));
                }
            }
        }
        let oracle = (kaa + kbb - 2.0 * kab) / 6.0;
        assert!((kid(&a, &b, 5).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn kid_same_generator_is_small() {
        let x = gaussian(2048, 8, 1.0, 0.0, 4);
        let a = FeatureMatrix::new(1024, 8, x.as_slice()[..1024 * 8].to_vec()).unwrap();
        let b = FeatureMatrix::new(1024, 8, x.as_slice()[1024 * 8..].to_vec()).unwrap();
        assert!(kid(&a, &b, 0).unwrap().abs() <= 0.01);
        let far = gaussian(1024, 8, 1.0, 1.0, 5);
        assert!(kid(&a, &far, 0).unwrap() > 0.1);
    }

    #[test]
    fn errors() {
        let one = gaussian(1, 3, 1.0, 0.0, 0);
        let two = gaussian(2, 3, 1.0, 0.0, 0);
        let other = gaussian(4, 2, 1.0, 0.0, 0);
        assert!(matches!(fid(&one, &two), Err(Error::TooFewSamples { .. })));
        assert!(matches!(kid(&two, &one, 0), Err(Error::TooFewSamples { .. })));
        assert!(matches!(fid(&two, &other), Err(Error::DimensionMismatch { .. })));
    }
}
