use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng::SeededRng;

use super::model::FlowModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            guidance_scale: 3.0,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sample steps must be at least 1".into()));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale {} must be finite and non-negative",
                self.guidance_scale
            )));
        }
        Ok(())
    }
}

/// A time-dependent vector field with and without its condition.
pub trait VelocityField {
    fn conditional(&self, z: &Mat, t: f64) -> Result<Mat>;
    fn unconditional(&self, z: &Mat, t: f64) -> Result<Mat>;
}

/// Euler integration from `t = 0` to `t = 1` in `steps` equal intervals with
/// the guided field `v_u + s·(v_c − v_u)`. At `s = 1` only the conditional
/// field is evaluated.
pub fn euler_integrate<F: VelocityField + ?Sized>(
    field: &F,
    start: Mat,
    steps: usize,
    guidance_scale: f64,
) -> Result<Mat> {
    if steps == 0 {
        return Err(Error::InvalidArgument("sample steps must be at least 1".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = start;
    for i in 0..steps {
        let t = i as f64 * dt;
        let vc = field.conditional(&z, t)?;
        let v = if guidance_scale == 1.0 {
            vc
        } else {
            let vu = field.unconditional(&z, t)?;
            let mut v = vc;
            v.zip_mut_with(&vu, |c, &u| *c = u + guidance_scale * (*c - u));
            v
        };
        z.zip_mut_with(&v, |zi, &vi| *zi += dt * vi);
    }
    Ok(z)
}

/// Draws the `N(0, 1)` start from `cfg.seed` and integrates.
pub fn euler_sample<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &SampleConfig,
    rows: usize,
    cols: usize,
) -> Result<Mat> {
    cfg.validate()?;
    let mut rng = SeededRng::derive(cfg.seed, "euler-start");
    let start = Mat::from_shape_fn((rows, cols), |_| rng.normal());
    euler_integrate(field, start, cfg.steps, cfg.guidance_scale)
}

/// The flow model under a fixed condition and its null counterpart.
///
/// `z` stacks `items` latents of `T` rows each; all items share `t`.
pub struct ConditionedField<'a> {
    model: &'a FlowModel,
    params: &'a ParamSet,
    cond: Mat,
    null: Mat,
    items: usize,
}

impl<'a> ConditionedField<'a> {
    pub fn new(model: &'a FlowModel, params: &'a ParamSet, cond: Mat, null: Mat, items: usize) -> Self {
        Self {
            model,
            params,
            cond,
            null,
            items,
        }
    }

    fn eval(&self, z: &Mat, t: f64, cond: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let cv = tape.constant(cond.clone());
        let times = vec![t; self.items];
        let out = self.model.velocity(&mut tape, &p, zv, &times, cv)?;
        Ok(tape.value(out).clone())
    }
}

impl VelocityField for ConditionedField<'_> {
    fn conditional(&self, z: &Mat, t: f64) -> Result<Mat> {
        self.eval(z, t, &self.cond)
    }

    fn unconditional(&self, z: &Mat, t: f64) -> Result<Mat> {
        self.eval(z, t, &self.null)
    }
}
