//! Flow matching on the straight path between data and noise.
//!
//! A latent is a `T × d` matrix. At time `t` the path point is
//! `t·z0 + (1−t)·z1` (data `z0` at `t = 1`, noise `z1` at `t = 0`), and its
//! time derivative `z0 − z1` is the regression target.

mod checkpoint;
mod generator;
mod model;
mod sample;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_manifest, ParamEntry, save_checkpoint, Checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
pub use generator::{ConditionInput, FlowDataset, Generator, GeneratorConfig};
pub use model::{FlowModel, ModelConfig};
pub use sample::{euler_integrate, euler_sample, ConditionedField, SampleConfig, VelocityField};
pub use train::{run_single_stage, run_two_stage, train_step, AdamW, LrSchedule, StageReport, TrainConfig, TwoStageReport};

use crate::autograd::Mat;
use crate::error::{Error, Result};

fn same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn interpolate(z0: &Mat, z1: &Mat, t: f64) -> Result<Mat> {
    same_shape(z0, z1)?;
    let mut out = z0 * t;
    out.zip_mut_with(z1, |o, &b| *o += (1.0 - t) * b);
    Ok(out)
}

pub fn target_velocity(z0: &Mat, z1: &Mat) -> Result<Mat> {
    same_shape(z0, z1)?;
    Ok(z0 - z1)
}

/// Mean squared error over all elements.
pub fn flow_loss(pred: &Mat, target: &Mat) -> Result<f64> {
    same_shape(pred, target)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn m(v: &[f64]) -> Mat {
        Mat::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let z0 = m(&[2.0, -1.0]);
        let z1 = m(&[0.0, 3.0]);
        assert_eq!(interpolate(&z0, &z1, 0.0).unwrap(), z1);
        assert_eq!(interpolate(&z0, &z1, 1.0).unwrap(), z0);
        assert_eq!(interpolate(&m(&[2.0]), &m(&[0.0]), 0.5).unwrap(), m(&[1.0]));
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(target_velocity(&m(&[1.0, 0.0]), &m(&[0.0, 1.0])).unwrap(), m(&[1.0, -1.0]));
        let z = m(&[0.3, 0.4]);
        assert_eq!(target_velocity(&z, &z).unwrap(), m(&[0.0, 0.0]));
    }

    #[test]
    fn loss_examples() {
        let a = m(&[0.5, -2.0, 1.0]);
        assert_eq!(flow_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(flow_loss(&(&a + 1.0), &a).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = Mat::zeros((1, 2));
        let b = Mat::zeros((2, 1));
        assert!(matches!(interpolate(&a, &b, 0.5), Err(Error::ShapeMismatch(_))));
        assert!(matches!(target_velocity(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(flow_loss(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    fn latent(seed: u64) -> (Mat, Mat) {
        let mut rng = SeededRng::new(seed);
        let z0 = Mat::from_shape_fn((3, 4), |_| rng.normal());
        let z1 = Mat::from_shape_fn((3, 4), |_| rng.normal());
        (z0, z1)
    }

    proptest! {
        #[test]
        fn path_conserves_data_endpoint(seed in any::<u64>(), t in 0.0f64..=1.0) {
            let (z0, z1) = latent(seed);
            let zt = interpolate(&z0, &z1, t).unwrap();
            let v = target_velocity(&z0, &z1).unwrap();
            let back = &zt + &(&v * (1.0 - t));
            for (a, b) in back.iter().zip(z0.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn finite_difference_is_velocity(seed in any::<u64>(), t in 0.0f64..0.99) {
            let (z0, z1) = latent(seed);
            let h = 1e-6;
            let a = interpolate(&z0, &z1, t).unwrap();
            let b = interpolate(&z0, &z1, t + h).unwrap();
            let v = target_velocity(&z0, &z1).unwrap();
            for ((x, y), w) in a.iter().zip(b.iter()).zip(v.iter()) {
                prop_assert!(((y - x) / h - w).abs() <= 1e-6 * (1.0 + w.abs()));
            }
        }

        #[test]
        fn loss_is_permutation_invariant(seed in any::<u64>(), shift in 0usize..12) {
            let (a, b) = latent(seed);
            let perm = |m: &Mat| {
                let flat: Vec<f64> = m.iter().copied().collect();
                let n = flat.len();
                Mat::from_shape_fn(m.dim(), |(r, c)| flat[(r * m.ncols() + c + shift) % n])
            };
            let l1 = flow_loss(&a, &b).unwrap();
            let l2 = flow_loss(&perm(&a), &perm(&b)).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-12 * (1.0 + l1));
        }
    }
}
