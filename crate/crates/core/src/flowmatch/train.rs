use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::rng::SeededRng;

use super::checkpoint::Checkpoint;
use super::generator::{FlowDataset, Generator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// 1: warmup + cosine; 2: fixed rate.
    pub stage: u8,
    pub steps: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub fixed_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub uncond_drop_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            steps: 10_000,
            batch: 512,
            peak_lr: 1e-4,
            min_lr: 1e-5,
            warmup_fraction: 0.02,
            fixed_lr: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            uncond_drop_prob: 0.1,
            seed: 0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            steps: 500,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("train stage must be 1 or 2, got {}", self.stage));
        }
        if self.steps == 0 || self.batch == 0 {
            return bad("train steps and batch must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.uncond_drop_prob) {
            return bad("uncond_drop_prob must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("peak_lr", self.peak_lr),
            ("min_lr", self.min_lr),
            ("fixed_lr", self.fixed_lr),
            ("weight_decay", self.weight_decay),
            ("eps", self.eps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer moments must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        if self.stage == 2 {
            return LrSchedule::Constant { lr: self.fixed_lr };
        }
        LrSchedule::WarmupCosine {
            peak: self.peak_lr,
            min: self.min_lr,
            warmup_steps: (self.warmup_fraction * self.steps as f64).round() as usize,
            total_steps: self.steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// Linear ramp reaching `peak` at step `warmup_steps`, then a half cosine
    /// ending at `min` on the last step.
    WarmupCosine {
        peak: f64,
        min: f64,
        warmup_steps: usize,
        total_steps: usize,
    },
    Constant { lr: f64 },
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::WarmupCosine {
                peak,
                min,
                warmup_steps,
                total_steps,
            } => {
                if step < warmup_steps {
                    return peak * (step + 1) as f64 / (warmup_steps + 1) as f64;
                }
                let span = total_steps.saturating_sub(1).saturating_sub(warmup_steps);
                let progress = if span == 0 {
                    1.0
                } else {
                    ((step - warmup_steps) as f64 / span as f64).min(1.0)
                };
                min + 0.5 * (peak - min) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `θ ← θ(1 − lr·wd) − lr·m̂/(√v̂ + eps)` for every parameter with a gradient.
    pub fn update(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Mat>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, theta) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Mat::zeros(g.dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Mat::zeros(g.dim()));
            let decay = 1.0 - lr * self.weight_decay;
            ndarray::Zip::from(theta)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|th, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *th = *th * decay - lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }
}

/// One optimizer update on a freshly drawn batch; returns the batch loss.
///
/// Items are drawn with replacement. Each item gets its own `t ~ U(0, 1)`,
/// noise `z1 ~ N(0, 1)` and condition-dropout coin; items sharing a
/// condition and coin are evaluated together.
pub fn train_step(
    gen: &mut Generator,
    opt: &mut AdamW,
    data: &FlowDataset,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (t_len, d_latent) = {
        let m = gen.flow().config();
        (m.tokens, m.d_latent)
    };
    let mut groups: BTreeMap<(usize, bool), Vec<(usize, f64, Mat)>> = BTreeMap::new();
    for _ in 0..cfg.batch {
        let item = rng.below(data.len());
        let t = rng.uniform();
        let z1 = Mat::from_shape_fn((t_len, d_latent), |_| rng.normal());
        let dropped = rng.uniform() < cfg.uncond_drop_prob;
        groups
            .entry((data.labels[item], dropped))
            .or_default()
            .push((item, t, z1));
    }

    let mut tape = Tape::new();
    let p = gen.params().bind(&mut tape, true);
    let mut parts = Vec::with_capacity(groups.len());
    for ((cond_idx, dropped), members) in &groups {
        let cond = gen.condition_var(&mut tape, &p, &data.conditions[*cond_idx], *dropped)?;
        let n = members.len();
        let mut zt = Mat::zeros((n * t_len, d_latent));
        let mut target = Mat::zeros((n * t_len, d_latent));
        let mut times = Vec::with_capacity(n);
        for (k, (item, t, z1)) in members.iter().enumerate() {
            let z0 = &data.latents[*item];
            let rows = ndarray::s![k * t_len..(k + 1) * t_len, ..];
            zt.slice_mut(rows).assign(&super::interpolate(z0, z1, *t)?);
            target.slice_mut(rows).assign(&super::target_velocity(z0, z1)?);
            times.push(*t);
        }
        let zv = tape.constant(zt);
        let pred = gen.flow().velocity(&mut tape, &p, zv, &times, cond)?;
        let tv = tape.constant(target);
        let diff = tape.sub(pred, tv);
        parts.push(tape.sum_squares(diff));
    }
    let total = tape.sum_scalars(&parts);
    let loss = tape.scale(total, 1.0 / (cfg.batch * t_len * d_latent) as f64);
    let value = tape.scalar(loss);
    let lr = cfg.schedule().lr(step);
    if !value.is_finite() {
        let max_abs = gen
            .params()
            .iter()
            .flat_map(|(_, m)| m.iter().copied())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        return Err(Error::NonFiniteLoss {
            step,
            diagnostics: format!("stage {} lr {lr:e} max |param| {max_abs:e}", cfg.stage),
        });
    }
    let grads = p.gradients(&tape, &tape.backward(loss));
    opt.update(gen.params_mut(), &grads, lr);
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub steps: usize,
    pub losses: Vec<f64>,
}

impl StageReport {
    /// Mean loss over the first and last `window` steps.
    pub fn head_tail_means(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageReport {
    pub stage1: StageReport,
    pub stage2: StageReport,
}

fn run_stage(gen: &mut Generator, data: &FlowDataset, cfg: &TrainConfig) -> Result<StageReport> {
    cfg.validate()?;
    let m = gen.flow().config();
    data.validate(m.tokens, m.d_latent)?;
    let mut opt = AdamW::new(cfg);
    let mut rng = SeededRng::derive(cfg.seed, &format!("train-stage{}", cfg.stage));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        losses.push(train_step(gen, &mut opt, data, cfg, step, &mut rng)?);
    }
    Ok(StageReport {
        stage: cfg.stage,
        steps: cfg.steps,
        losses,
    })
}

/// Stage 1 on `large`, then stage 2 from the stage-1 weights on `small`.
/// The returned checkpoint holds both stage configs and the final weights.
pub fn run_two_stage(
    mut gen: Generator,
    large: &FlowDataset,
    small: &FlowDataset,
    stage1: &TrainConfig,
    stage2: &TrainConfig,
) -> Result<(Checkpoint, TwoStageReport)> {
    if large.is_empty() || small.is_empty() {
        return Err(Error::EmptyInput);
    }
    if stage1.stage != 1 || stage2.stage != 2 {
        return Err(Error::Config("stage configs must be tagged 1 and 2".into()));
    }
    let r1 = run_stage(&mut gen, large, stage1)?;
    let r2 = run_stage(&mut gen, small, stage2)?;
    let ckpt = Checkpoint::new(gen, vec![stage1.clone(), stage2.clone()]);
    Ok((ckpt, TwoStageReport { stage1: r1, stage2: r2 }))
}

/// A single stage, for resuming or running the stages separately.
pub fn run_single_stage(gen: &mut Generator, data: &FlowDataset, cfg: &TrainConfig) -> Result<StageReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    run_stage(gen, data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::generator::{ConditionInput, GeneratorConfig};
    use crate::flowmatch::model::ModelConfig;
    use crate::msc::MscConfig;

    #[test]
    fn published_defaults() {
        let s1 = TrainConfig::stage1();
        assert_eq!((s1.peak_lr, s1.min_lr, s1.warmup_fraction), (1e-4, 1e-5, 0.02));
        assert_eq!((s1.beta1, s1.beta2, s1.eps, s1.weight_decay), (0.9, 0.999, 1e-8, 0.01));
        assert_eq!(s1.steps, 10_000);
        let s2 = TrainConfig::stage2();
        assert_eq!((s2.steps, s2.fixed_lr), (500, 2e-5));
    }

    #[test]
    fn stage1_schedule_endpoints() {
        let sched = TrainConfig::stage1().schedule();
        assert_eq!(sched.lr(200), 1e-4);
        assert!((sched.lr(9_999) - 1e-5).abs() <= 1e-9);
        assert!(sched.lr(0) < sched.lr(100));
        assert!(sched.lr(100) < sched.lr(199));
        let mut prev = f64::INFINITY;
        for s in 200..10_000 {
            let lr = sched.lr(s);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn stage2_is_constant() {
        let sched = TrainConfig::stage2().schedule();
        assert!((0..500).all(|s| sched.lr(s) == 2e-5));
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut params = ParamSet::new();
        params.insert("w", Mat::from_elem((1, 2), 1.0));
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::stage1()
        };
        let mut opt = AdamW::new(&cfg);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Mat::from_shape_vec((1, 2), vec![0.5, -3.0]).unwrap());
        opt.update(&mut params, &grads, 0.1);
        let w = params.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut params = ParamSet::new();
        params.insert("w", Mat::from_elem((1, 1), 2.0));
        let mut opt = AdamW::new(&TrainConfig::stage1());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Mat::zeros((1, 1)));
        opt.update(&mut params, &grads, 0.5);
        assert_eq!(params.get("w").unwrap()[[0, 0]], 2.0 * (1.0 - 0.5 * 0.01));
    }

    fn tiny_setup() -> (Generator, FlowDataset) {
        let cfg = GeneratorConfig {
            msc: MscConfig {
                d_c: 8,
                n_queries: 2,
                proto_dim: 3,
                hidden: 8,
                backbone_heads: 2,
                token_buckets: 32,
                ..MscConfig::default()
            },
            model: ModelConfig {
                d_model: 8,
                heads: 2,
                ..ModelConfig::default()
            },
            init_seed: 2,
        };
        let gen = Generator::new(cfg).unwrap();
        let a = gen.condition_input("left blob", Mat::zeros((1, 3))).unwrap();
        let b = gen.condition_input("right blob", Mat::ones((2, 3))).unwrap();
        let mut rng = SeededRng::new(5);
        let mut data = FlowDataset {
            conditions: vec![a, b],
            ..FlowDataset::default()
        };
        for i in 0..40 {
            let c = i % 2;
            let centre = if c == 0 { -1.5 } else { 1.5 };
            data.latents.push(Mat::from_shape_fn((1, 2), |_| centre + 0.1 * rng.normal()));
            data.labels.push(c);
        }
        (gen, data)
    }

    #[test]
    fn frozen_batch_is_bitwise_deterministic() {
        let (gen, data) = tiny_setup();
        let cfg = TrainConfig {
            steps: 10,
            batch: 8,
            ..TrainConfig::stage1()
        };
        let run = || {
            let mut g = gen.clone();
            let mut opt = AdamW::new(&cfg);
            let mut rng = SeededRng::new(9);
            (0..10)
                .map(|s| train_step(&mut g, &mut opt, &data, &cfg, s, &mut rng).unwrap().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_loss_aborts_with_diagnostics() {
        let (mut gen, data) = tiny_setup();
        gen.params_mut().get_mut("dit.out.b").unwrap().fill(f64::NAN);
        let cfg = TrainConfig {
            batch: 4,
            ..TrainConfig::stage1()
        };
        let mut opt = AdamW::new(&cfg);
        let err = train_step(&mut gen, &mut opt, &data, &cfg, 3, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 3, .. }));
    }

    #[test]
    fn two_stage_rejects_empty_data() {
        let (gen, data) = tiny_setup();
        let empty = FlowDataset {
            conditions: vec![ConditionInput {
                prompt: Mat::zeros((1, 8)),
                protos: Mat::zeros((0, 3)),
            }],
            ..FlowDataset::default()
        };
        let r = run_two_stage(gen, &data, &empty, &TrainConfig::stage1(), &TrainConfig::stage2());
        assert!(matches!(r, Err(Error::EmptyInput)));
    }
}
