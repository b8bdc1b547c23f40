use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Bound, ParamSet};
use crate::rng::SeededRng;

/// Shape of the velocity transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent tokens per item.
    pub tokens: usize,
    /// Latent channels per token.
    pub d_latent: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tokens: 1,
            d_latent: 2,
            d_model: 32,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
        }
    }
}

/// Diffusion transformer: per-layer self-attention over latent tokens,
/// cross-attention to the condition, and a feed-forward block. Timestep
/// conditioning is one shared modulation map plus a learned per-layer table.
#[derive(Debug, Clone)]
pub struct FlowModel {
    cfg: ModelConfig,
    d_cond: usize,
}

impl FlowModel {
    pub fn new(cfg: ModelConfig, d_cond: usize) -> Result<Self> {
        if cfg.tokens == 0 || cfg.d_latent == 0 || cfg.layers == 0 || cfg.ffn_mult == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if cfg.d_model < 2 || cfg.d_model % 2 != 0 {
            return Err(Error::Config("model.d_model must be even".into()));
        }
        if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "model.d_model = {} is not divisible by model.heads = {}",
                cfg.d_model, cfg.heads
            )));
        }
        Ok(Self { cfg, d_cond })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn d_cond(&self) -> usize {
        self.d_cond
    }

    /// Trainable parameters under `dit.`.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamSet {
        let c = &self.cfg;
        let d = c.d_model;
        let mut p = ParamSet::new();
        p.init_linear("dit.embed", c.d_latent, d, 1.0, rng);
        p.init_normal("dit.pos", c.tokens, d, 0.02, rng);
        p.init_linear("dit.time.fc1", d, d, 1.0, rng);
        p.init_linear("dit.time.fc2", d, d, 1.0, rng);
        p.init_linear("dit.adaln", d, 6 * d, 0.5, rng);
        for l in 0..c.layers {
            let pre = format!("dit.layer{l}");
            p.init_normal(&format!("{pre}.table"), 1, 6 * d, 1.0 / (d as f64).sqrt(), rng);
            nn::init_attention(&mut p, &format!("{pre}.self"), d, d, rng);
            nn::init_attention(&mut p, &format!("{pre}.cross"), d, self.d_cond, rng);
            nn::init_feed_forward(&mut p, &format!("{pre}.ffn"), d, c.ffn_mult * d, d, rng);
        }
        p.init_normal("dit.final.table", 1, 2 * d, 1.0 / (d as f64).sqrt(), rng);
        p.init_linear("dit.out", d, c.d_latent, 0.5, rng);
        p
    }

    /// Sinusoidal features of `1000·t`, one row per item.
    pub fn timestep_features(&self, times: &[f64]) -> Mat {
        let d = self.cfg.d_model;
        let half = d / 2;
        Mat::from_shape_fn((times.len(), d), |(r, c)| {
            let j = c % half;
            let freq = (-(10_000f64).ln() * j as f64 / half as f64).exp();
            let arg = 1000.0 * times[r] * freq;
            if c < half {
                arg.cos()
            } else {
                arg.sin()
            }
        })
    }

    /// Velocity for `B` items sharing one condition.
    ///
    /// `z` stacks the items' latents (`B·T × d_latent`), `times` has one
    /// entry per item and `cond` is the `L × d_cond` condition sequence.
    pub fn velocity(&self, tape: &mut Tape, p: &Bound, z: Var, times: &[f64], cond: Var) -> Result<Var> {
        let c = &self.cfg;
        let d = c.d_model;
        let t_len = c.tokens;
        let b = times.len();
        let (rows, width) = tape.shape(z);
        if width != c.d_latent || rows != b * t_len {
            return Err(Error::ShapeMismatch(format!(
                "latent batch {rows}×{width} does not match {b} items of {t_len}×{}",
                c.d_latent
            )));
        }
        if tape.shape(cond).1 != self.d_cond {
            return Err(Error::WidthMismatch {
                expected: self.d_cond,
                got: tape.shape(cond).1,
            });
        }
        let item_of_row: Vec<usize> = (0..rows).map(|r| r / t_len).collect();
        let pos_of_row: Vec<usize> = (0..rows).map(|r| r % t_len).collect();

        let x = nn::linear(tape, p, "dit.embed", z);
        let pos = tape.gather_rows(p.get("dit.pos"), &pos_of_row);
        let mut x = tape.add(x, pos);

        let tf = tape.constant(self.timestep_features(times));
        let h = nn::linear(tape, p, "dit.time.fc1", tf);
        let h = tape.silu(h);
        let t_emb = nn::linear(tape, p, "dit.time.fc2", h);
        let act = tape.silu(t_emb);
        let shared = nn::linear(tape, p, "dit.adaln", act);
        let shared = tape.gather_rows(shared, &item_of_row);
        let t_rows = tape.gather_rows(t_emb, &item_of_row);

        for l in 0..c.layers {
            let pre = format!("dit.layer{l}");
            let m = tape.add_row(shared, p.get(&format!("{pre}.table")));
            let chunk = |tape: &mut Tape, i: usize| tape.slice_cols(m, i * d, d);
            let (shift1, scale1, gate1) = (chunk(tape, 0), chunk(tape, 1), chunk(tape, 2));
            let (shift2, scale2, gate2) = (chunk(tape, 3), chunk(tape, 4), chunk(tape, 5));

            let h = modulate(tape, x, shift1, scale1);
            let a = self.self_attention(tape, p, &format!("{pre}.self"), h, b);
            let a = tape.mul(gate1, a);
            x = tape.add(x, a);

            let kv = nn::project_kv(tape, p, &format!("{pre}.cross"), cond);
            let ca = nn::attention(tape, p, &format!("{pre}.cross"), x, kv, c.heads, false);
            x = tape.add(x, ca);

            let h = modulate(tape, x, shift2, scale2);
            let f = nn::feed_forward(tape, p, &format!("{pre}.ffn"), h);
            let f = tape.mul(gate2, f);
            x = tape.add(x, f);
        }

        let table = p.get("dit.final.table");
        let shift = tape.slice_cols(table, 0, d);
        let scale = tape.slice_cols(table, d, d);
        let shift = tape.add_row(t_rows, shift);
        let scale = tape.add_row(t_rows, scale);
        let h = modulate(tape, x, shift, scale);
        Ok(nn::linear(tape, p, "dit.out", h))
    }

    /// Attention within each item's `T` tokens.
    fn self_attention(&self, tape: &mut Tape, p: &Bound, name: &str, h: Var, items: usize) -> Var {
        let t_len = self.cfg.tokens;
        if t_len == 1 {
            // A single key gets softmax weight 1, so attention returns its value.
            let v = nn::linear(tape, p, &format!("{name}.v"), h);
            return nn::linear(tape, p, &format!("{name}.o"), v);
        }
        let outs: Vec<Var> = (0..items)
            .map(|i| {
                let hi = tape.slice_rows(h, i * t_len, t_len);
                let kv = nn::project_kv(tape, p, name, hi);
                nn::attention(tape, p, name, hi, kv, self.cfg.heads, false)
            })
            .collect();
        tape.concat_rows(&outs)
    }
}

/// `LN(x)·(1 + scale) + shift`.
fn modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
    let n = tape.layer_norm(x);
    let s = tape.add_scalar(scale, 1.0);
    let h = tape.mul(n, s);
    tape.add(h, shift)
}
