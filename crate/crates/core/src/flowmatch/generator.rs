use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::msc::{CompositeCondition, Msc, MscConfig};
use crate::nn::{Bound, ParamSet};
use crate::rng::SeededRng;

use super::model::{FlowModel, ModelConfig};
use super::sample::{euler_sample, ConditionedField, SampleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub msc: MscConfig,
    pub model: ModelConfig,
    /// Seed for trainable-parameter initialisation.
    pub init_seed: u64,
}

/// Inputs of one condition: the prompt embedding and its retrieved prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput {
    pub prompt: Mat,
    pub protos: Mat,
}

/// Latents paired with indices into a shared condition list.
#[derive(Debug, Clone, Default)]
pub struct FlowDataset {
    pub conditions: Vec<ConditionInput>,
    pub latents: Vec<Mat>,
    pub labels: Vec<usize>,
}

impl FlowDataset {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn validate(&self, tokens: usize, d_latent: usize) -> Result<()> {
        if self.latents.len() != self.labels.len() {
            return Err(Error::CountMismatch {
                left: self.latents.len(),
                right: self.labels.len(),
            });
        }
        for (z, &c) in self.latents.iter().zip(&self.labels) {
            if z.dim() != (tokens, d_latent) {
                return Err(Error::ShapeMismatch(format!(
                    "latent {:?} is not {tokens}×{d_latent}",
                    z.dim()
                )));
            }
            if c >= self.conditions.len() {
                return Err(Error::UnknownId(format!("condition {c}")));
            }
        }
        Ok(())
    }
}

/// Condition builder, flow model and every trainable parameter.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    msc: Msc,
    flow: FlowModel,
    params: ParamSet,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        let msc = Msc::new(cfg.msc.clone())?;
        let flow = FlowModel::new(cfg.model.clone(), cfg.msc.d_c)?;
        let params = Self::fresh_params(&msc, &flow, cfg.init_seed);
        Ok(Self {
            cfg,
            msc,
            flow,
            params,
        })
    }

    /// Rebuilds the frozen parts from `cfg` and installs `params`, which must
    /// match the expected names and shapes.
    pub fn from_parts(cfg: GeneratorConfig, params: ParamSet) -> Result<Self> {
        let mut g = Self::new(cfg)?;
        if g.params.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                g.params.len(),
                params.len()
            )));
        }
        for (name, value) in g.params.iter() {
            match params.get(name) {
                Some(v) if v.dim() == value.dim() => {}
                Some(v) => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {name} is {:?}, expected {:?}",
                        v.dim(),
                        value.dim()
                    )))
                }
                None => return Err(Error::ShapeMismatch(format!("missing parameter {name}"))),
            }
        }
        g.params = params;
        Ok(g)
    }

    fn fresh_params(msc: &Msc, flow: &FlowModel, seed: u64) -> ParamSet {
        let mut p = msc.init_params(&mut SeededRng::derive(seed, "msc-init"));
        p.extend(flow.init_params(&mut SeededRng::derive(seed, "dit-init")));
        p
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn msc(&self) -> &Msc {
        &self.msc
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Rounds every parameter through `f32`, the checkpoint storage precision.
    pub fn snap_params(&mut self) {
        for (_, v) in self.params.iter_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }

    pub fn condition_input(&self, prompt: &str, protos: Mat) -> Result<ConditionInput> {
        if protos.ncols() != self.cfg.msc.proto_dim {
            return Err(Error::WidthMismatch {
                expected: self.cfg.msc.proto_dim,
                got: protos.ncols(),
            });
        }
        Ok(ConditionInput {
            prompt: self.msc.embed_prompt(prompt)?,
            protos,
        })
    }

    /// Condition (or its null counterpart) on a tape.
    pub fn condition_var(&self, tape: &mut Tape, p: &Bound, input: &ConditionInput, dropped: bool) -> Result<Var> {
        if dropped {
            Ok(self
                .msc
                .null_condition(tape, p, input.prompt.nrows(), input.protos.nrows()))
        } else {
            self.msc.condition(tape, p, &input.prompt, &input.protos)
        }
    }

    pub fn condition(&self, input: &ConditionInput) -> Result<CompositeCondition> {
        self.msc.compose(&self.params, &input.prompt, &input.protos)
    }

    pub fn null_condition(&self, input: &ConditionInput) -> Result<CompositeCondition> {
        self.msc
            .null_composite(&self.params, input.prompt.nrows(), input.protos.nrows())
    }

    /// `n` latents stacked as `n·T × d_latent`.
    pub fn sample(&self, input: &ConditionInput, n: usize, cfg: &SampleConfig) -> Result<Mat> {
        let cond = self.condition(input)?.into_tokens();
        let null = self.null_condition(input)?.into_tokens();
        let field = ConditionedField::new(&self.flow, &self.params, cond, null, n);
        let m = self.flow.config();
        euler_sample(&field, cfg, n * m.tokens, m.d_latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            msc: MscConfig {
                d_c: 8,
                n_queries: 2,
                proto_dim: 4,
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
            init_seed: 1,
        }
    }

    #[test]
    fn from_parts_checks_layout() {
        let g = Generator::new(tiny()).unwrap();
        let ok = Generator::from_parts(tiny(), g.params().clone()).unwrap();
        assert_eq!(ok.params(), g.params());
        let mut bad = g.params().clone();
        bad.insert("dit.out.b", Mat::zeros((1, 5)));
        assert!(matches!(Generator::from_parts(tiny(), bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let g = Generator::new(tiny()).unwrap();
        let input = g.condition_input("tumor region", Mat::zeros((3, 4))).unwrap();
        let cfg = SampleConfig {
            steps: 4,
            ..SampleConfig::default()
        };
        let a = g.sample(&input, 5, &cfg).unwrap();
        let b = g.sample(&input, 5, &cfg).unwrap();
        assert_eq!(a.dim(), (5, 2));
        assert_eq!(a, b);
        let c = g.sample(&input, 5, &SampleConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_wrong_proto_width() {
        let g = Generator::new(tiny()).unwrap();
        assert!(matches!(
            g.condition_input("x", Mat::zeros((1, 5))),
            Err(Error::WidthMismatch { .. })
        ));
    }
}
