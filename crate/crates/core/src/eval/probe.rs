//! Linear-probe classification on frozen features.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;
use crate::rng::SeededRng;

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.6, 0.2, 0.2);
pub const L2_STRENGTH: f64 = 1e-3;
pub const MAX_ITERS: usize = 500;
pub const PATIENCE: usize = 20;
const STEP_SIZE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    fn subset(&self, ids: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.gather(ids)?,
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Disjoint train/validation/test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplit {
    pub train: LabeledFeatures,
    pub val: LabeledFeatures,
    pub test: LabeledFeatures,
}

impl ProbeSplit {
    /// Seeded shuffle, then cuts at 60% and 80%.
    pub fn from_shuffled(data: &LabeledFeatures, seed: u64) -> Result<Self> {
        let n = data.labels.len();
        let mut ids: Vec<usize> = (0..n).collect();
        SeededRng::derive(seed, "probe-split").shuffle(&mut ids);
        let a = (SPLIT_FRACTIONS.0 * n as f64).round() as usize;
        let b = ((SPLIT_FRACTIONS.0 + SPLIT_FRACTIONS.1) * n as f64).round() as usize;
        let split = Self {
            train: data.subset(&ids[..a])?,
            val: data.subset(&ids[a..b])?,
            test: data.subset(&ids[b..])?,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if part.labels.is_empty() {
                return Err(Error::DegenerateSplit(format!("{name} split is empty")));
            }
        }
        let d = self.train.features.dim();
        if self.val.features.dim() != d || self.test.features.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.test.features.dim().max(self.val.features.dim()),
            });
        }
        let classes = self.num_classes();
        let mut seen = vec![false; classes];
        for &l in &self.train.labels {
            seen[l] = true;
        }
        if seen.iter().filter(|s| **s).count() < 2 {
            return Err(Error::SingleClass);
        }
        if let Some(c) = seen.iter().position(|s| !*s) {
            return Err(Error::DegenerateSplit(format!("class {c} is absent from train")));
        }
        Ok(())
    }

    fn num_classes(&self) -> usize {
        self.train
            .labels
            .iter()
            .chain(&self.val.labels)
            .chain(&self.test.labels)
            .max()
            .map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub weighted_f1: f64,
    pub weighted_auc: f64,
    pub iterations: usize,
    pub best_val_loss: f64,
}

struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0);
        let inv_std = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 });
        Self { mean, inv_std }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) * &self.inv_std
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

fn probabilities(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut p = x.dot(w) + b;
    softmax_rows(&mut p);
    p
}

fn cross_entropy(p: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -p[[i, l]].max(1e-300).ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// Multinomial logistic regression by full-batch gradient descent with an
/// L2 penalty, keeping the weights of the lowest validation loss.
pub fn linear_probe(split: &ProbeSplit, seed: u64) -> Result<ProbeResult> {
    split.validate()?;
    let classes = split.num_classes();
    let scaler = Standardizer::fit(split.train.features.as_array());
    let xtr = scaler.apply(split.train.features.as_array());
    let xva = scaler.apply(split.val.features.as_array());
    let xte = scaler.apply(split.test.features.as_array());
    let (n, d) = xtr.dim();
    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (i, &l) in split.train.labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }

    let mut rng = SeededRng::derive(seed, "probe-init");
    let mut w = Array2::from_shape_fn((d, classes), |_| 0.01 * rng.normal());
    let mut b = Array1::<f64>::zeros(classes);
    let mut best = (f64::INFINITY, w.clone(), b.clone());
    let mut since_best = 0;
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let p = probabilities(&xtr, &w, &b);
        let err = (p - &onehot) / n as f64;
        let gw = xtr.t().dot(&err) + &w * L2_STRENGTH;
        let gb = err.sum_axis(Axis(0));
        w = w - gw * STEP_SIZE;
        b = b - gb * STEP_SIZE;
        let val_loss = cross_entropy(&probabilities(&xva, &w, &b), &split.val.labels);
        if val_loss < best.0 {
            best = (val_loss, w.clone(), b.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= PATIENCE {
                break;
            }
        }
    }
    let (best_val_loss, w, b) = best;
    let p = probabilities(&xte, &w, &b);
    let pred: Vec<usize> = p
        .rows()
        .into_iter()
        .map(|r| {
            (0..classes)
                .max_by(|&a, &c| r[a].total_cmp(&r[c]).then(c.cmp(&a)))
                .expect("classes ≥ 2")
        })
        .collect();
    Ok(ProbeResult {
        weighted_f1: weighted_f1(&split.test.labels, &pred, classes),
        weighted_auc: weighted_ovr_auc(&split.test.labels, &p)?,
        iterations,
        best_val_loss,
    })
}

/// Per-class F1 weighted by true-class support.
pub fn weighted_f1(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let n = truth.len() as f64;
    let mut total = 0.0;
    for c in 0..classes {
        let support = truth.iter().filter(|&&t| t == c).count();
        if support == 0 {
            continue;
        }
        let tp = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(&t, &p)| t != c && p == c).count() as f64;
        let fnn = support as f64 - tp;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
        total += f1 * support as f64 / n;
    }
    total
}

/// Rank-based AUC; tied scores count one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// One-vs-rest AUC per class present in `truth`, weighted by support.
pub fn weighted_ovr_auc(truth: &[usize], probs: &Array2<f64>) -> Result<f64> {
    let n = truth.len() as f64;
    let mut total = 0.0;
    for c in 0..probs.ncols() {
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let support = positive.iter().filter(|p| **p).count();
        if support == 0 {
            continue;
        }
        let scores: Vec<f64> = probs.column(c).to_vec();
        let auc = binary_auc(&scores, &positive)
            .ok_or_else(|| Error::DegenerateSplit("test split holds a single class".into()))?;
        total += auc * support as f64 / n;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, separation: f64, shuffle_labels: bool, seed: u64) -> LabeledFeatures {
        let mut rng = SeededRng::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -separation } else { separation };
            rows.push(vec![centre + 0.1 * rng.normal(), rng.normal(), rng.normal()]);
            labels.push(c);
        }
        if shuffle_labels {
            rng.shuffle(&mut labels);
        }
        LabeledFeatures::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let split = ProbeSplit::from_shuffled(&blobs(300, 5.0, false, 1), 7).unwrap();
        let r = linear_probe(&split, 0).unwrap();
        assert!((r.weighted_f1 - 1.0).abs() <= 1e-6);
        assert!((r.weighted_auc - 1.0).abs() <= 1e-6);
    }

    /// One test split of 400 has AUC standard error near 0.03, so the
    /// tolerance is applied to the mean over five independent datasets.
    #[test]
    fn shuffled_labels_are_chance() {
        let aucs: Vec<f64> = (0..5)
            .map(|s| {
                let split = ProbeSplit::from_shuffled(&blobs(2000, 5.0, true, s), s).unwrap();
                let r = linear_probe(&split, 0).unwrap();
                assert!((0.0..=1.0).contains(&r.weighted_f1));
                r.weighted_auc
            })
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() <= 0.05, "aucs {aucs:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let split = ProbeSplit::from_shuffled(&blobs(200, 0.3, false, 4), 1).unwrap();
        assert_eq!(linear_probe(&split, 5).unwrap(), linear_probe(&split, 5).unwrap());
    }

    #[test]
    fn split_fractions_and_errors() {
        let data = blobs(100, 1.0, false, 0);
        let split = ProbeSplit::from_shuffled(&data, 0).unwrap();
        assert_eq!(
            (split.train.labels.len(), split.val.labels.len(), split.test.labels.len()),
            (60, 20, 20)
        );
        let one = LabeledFeatures::new(data.features.clone(), vec![0; 100]).unwrap();
        assert!(matches!(ProbeSplit::from_shuffled(&one, 0), Err(Error::SingleClass)));
        let tiny = LabeledFeatures::new(data.features.gather(&[0, 1]).unwrap(), vec![0, 1]).unwrap();
        assert!(matches!(
            ProbeSplit::from_shuffled(&tiny, 0),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn auc_handles_ties() {
        assert_eq!(binary_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(binary_auc(&[0.1, 0.9, 0.4], &[false, true, false]), Some(1.0));
        assert_eq!(binary_auc(&[0.1, 0.9], &[true, true]), None);
    }

    #[test]
    fn f1_hand_example() {
        // Class 0: tp 1, fp 1, fn 1 → 0.5; class 1: tp 1, fp 1, fn 1 → 0.5.
        assert!((weighted_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2) - 0.5).abs() < 1e-15);
    }
}
