//! Run configuration: one TOML file, strictly parsed.
//!
//! A user file is overlaid on the defaults key by key. Any key without a
//! default counterpart is rejected with its dotted path. The `provider`
//! table is replaced wholesale because its variants carry different keys.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum::sha256_hex;
use crate::embed::ProviderSpec;
use crate::error::{Error, Result};
use crate::eval::KM_SWEEP;
use crate::flowmatch::{GeneratorConfig, ModelConfig, SampleConfig, TrainConfig};
use crate::msc::MscConfig;
use crate::retrieval::{RetrievalConfig, RetrievalMode};
use crate::rng::derive_seed;
use crate::toy::{BankPlan, CurationPlan, ToyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
    /// Latents drawn per evaluation prompt.
    pub per_prompt: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let s = SampleConfig::default();
        Self {
            steps: s.steps,
            guidance_scale: s.guidance_scale,
            seed: s.seed,
            per_prompt: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Cutoffs for Recall@k and mAP@k.
    pub ks: Vec<usize>,
    pub leakage_threshold: f64,
    pub probe: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            leakage_threshold: crate::eval::LEAKAGE_THRESHOLD,
            probe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub km_values: Vec<usize>,
    pub modes: Vec<RetrievalMode>,
    pub per_prompt: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            km_values: KM_SWEEP.to_vec(),
            modes: RetrievalMode::ALL.to_vec(),
            per_prompt: 128,
        }
    }
}

/// Every setting of a pipeline run. Component seeds are offsets mixed into
/// the global `seed`, so changing `seed` alone reseeds every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: ToyConfig,
    pub provider: ProviderSpec,
    pub curation: CurationPlan,
    pub bank: BankPlan,
    pub retrieval: RetrievalConfig,
    pub msc: MscConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ToyConfig::default(),
            provider: ProviderSpec::default(),
            curation: CurationPlan::default(),
            bank: BankPlan::default(),
            retrieval: RetrievalConfig::default(),
            msc: MscConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// Tables whose keys depend on a variant tag and are therefore not merged.
const REPLACED_TABLES: &[&str] = &["provider"];

fn overlay(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<()> {
    for (key, value) in user {
        let dotted = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let Some(slot) = base.get_mut(&key) else {
            return Err(Error::Config(format!("unknown key `{dotted}`")));
        };
        match (slot, value) {
            (toml::Value::Table(b), toml::Value::Table(u)) if !REPLACED_TABLES.contains(&dotted.as_str()) => {
                overlay(b, u, &dotted)?
            }
            (slot, value) => *slot = value,
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let toml::Value::Table(mut merged) = toml::Value::try_from(RunConfig::default()).expect("defaults serialize")
        else {
            unreachable!("a struct serializes to a table")
        };
        overlay(&mut merged, user, "")?;
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.curation.validate()?;
        self.msc.validate().map_err(cfg_err)?;
        if self.msc.proto_dim != self.data.proto_dim {
            return Err(Error::Config(format!(
                "msc.proto_dim = {} must equal data.proto_dim = {}",
                self.msc.proto_dim, self.data.proto_dim
            )));
        }
        if (self.model.tokens, self.model.d_latent) != (1, 2) {
            return Err(Error::Config("the toy task needs model.tokens = 1 and model.d_latent = 2".into()));
        }
        for (name, t, stage) in [("stage1", &self.train.stage1, 1), ("stage2", &self.train.stage2, 2)] {
            if t.stage != stage {
                return Err(Error::Config(format!("train.{name}.stage is fixed at {stage}")));
            }
            t.validate()?;
        }
        self.sample_config(0).validate().map_err(cfg_err)?;
        if self.sample.per_prompt < 2 || self.ablate.per_prompt < 2 {
            return Err(Error::Config("sample.per_prompt and ablate.per_prompt must be at least 2".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be a non-empty list of positive cutoffs".into()));
        }
        if let Some(km) = self.ablate.km_values.iter().find(|&&k| k % 4 != 0) {
            return Err(Error::Config(format!("ablate.km_values contains {km}, which is not divisible by 4")));
        }
        Ok(())
    }

    /// Canonical TOML rendering; this is what the run directory echoes.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// `<hash16>-s<seed>`.
    pub fn run_id(&self) -> String {
        format!("{}-s{}", &self.hash()[..16], self.seed)
    }

    fn mixed(&self, label: &str, offset: u64) -> u64 {
        derive_seed(self.seed, label) ^ offset
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            msc: self.msc.clone(),
            model: self.model.clone(),
            init_seed: self.mixed("init", 0),
        }
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            seed: self.mixed("retrieval", self.retrieval.seed),
            ..self.retrieval
        }
    }

    pub fn train_config(&self, stage: u8) -> TrainConfig {
        let t = if stage == 1 { &self.train.stage1 } else { &self.train.stage2 };
        TrainConfig {
            seed: self.mixed(&format!("train-stage{stage}"), t.seed),
            ..t.clone()
        }
    }

    /// Sampler settings for the `prompt`-th evaluation prompt.
    pub fn sample_config(&self, prompt: usize) -> SampleConfig {
        SampleConfig {
            steps: self.sample.steps,
            guidance_scale: self.sample.guidance_scale,
            seed: self.mixed(&format!("sample-{prompt}"), self.sample.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_keep_section_defaults() {
        let c = RunConfig::from_toml_str("seed = 4\n[train.stage2]\nsteps = 7\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.stage2.steps, 7);
        assert_eq!(c.train.stage2.stage, 2);
        assert_eq!(c.train.stage1, TrainConfig::stage1());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml_str("[train.stage1]\nlearning_rate = 1.0\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("train.stage1.learning_rate")), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_toml_str("sed = 1\n").unwrap_err();
        assert!(e.to_string().contains("`sed`"));
    }

    #[test]
    fn type_errors_and_invalid_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml_str("seed = \"x\"\n"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml_str("[train.stage1]\nstage = 2\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[ablate]\nkm_values = [6]\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_toml_str("[msc]\nproto_dim = 8\n"), Err(Error::Config(_))));
    }

    #[test]
    fn provider_table_is_replaced() {
        let c = RunConfig::from_toml_str(
            "[provider]\nkind = \"feature-file\"\nmatrix = \"f.bin\"\nids = \"ids.txt\"\n",
        )
        .unwrap();
        assert!(matches!(c.provider, ProviderSpec::FeatureFile { .. }));
    }

    #[test]
    fn echo_round_trips_and_hash_tracks_content() {
        let c = RunConfig::from_toml_str("seed = 3\n[sample]\nper_prompt = 64\n").unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let d = RunConfig { seed: 4, ..c.clone() };
        assert_ne!(d.run_id(), c.run_id());
        assert!(c.run_id().ends_with("-s3"));
        assert_eq!(c.run_id().len(), 16 + 3);
    }

    #[test]
    fn global_seed_reaches_every_component() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.generator_config().init_seed, b.generator_config().init_seed);
        assert_ne!(a.retrieval_config().seed, b.retrieval_config().seed);
        assert_ne!(a.train_config(1).seed, b.train_config(1).seed);
        assert_ne!(a.train_config(1).seed, a.train_config(2).seed);
        assert_ne!(a.sample_config(0).seed, a.sample_config(1).seed);
    }
}
