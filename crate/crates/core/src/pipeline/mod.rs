//! Stage orchestration over a content-addressed run directory.
//!
//! A run directory is `<out>/<hash16>-s<seed>` and holds the echoed
//! `config.toml` plus one subdirectory per completed stage, each closed by a
//! `stage.json` manifest. Every stage reads only the config and upstream
//! artifacts on disk, so re-running one stage alone reproduces its outputs.

mod config;
mod files;
mod manifest;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy::{self, ToySplits, ToyWorld};

pub use config::{AblateSection, EvalSection, RunConfig, SampleSection, TrainSection};
pub use files::{bank_from_files, curate_inputs, BankFiles, CurationLists};
pub use manifest::{
    checksum_artifacts, list_artifacts, verify_repro, write_atomic, Divergence, ReproOutcome, RunManifest,
    CODE_VERSION, STAGE_MANIFEST,
};
pub use stages::{read_samples, sample_prompts, toy_metrics, PromptSamples, ToySampler};

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Curate,
    Bank,
    Train,
    Sample,
    Eval,
    Ablate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Curate, Stage::Bank, Stage::Train, Stage::Sample, Stage::Eval, Stage::Ablate];
    /// What `run` executes when no stage list is given.
    pub const DEFAULT_RUN: [Stage; 5] = [Stage::Curate, Stage::Bank, Stage::Train, Stage::Sample, Stage::Eval];

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Curate => "curate",
            Stage::Bank => "bank",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
        }
    }

    /// Upstream stages whose artifacts this stage reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Curate | Stage::Bank => &[],
            Stage::Train => &[Stage::Bank],
            Stage::Sample | Stage::Ablate => &[Stage::Train, Stage::Bank],
            Stage::Eval => &[Stage::Sample],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.dir_name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Which halves of the two-stage schedule the train stage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainSelection {
    One,
    Two,
    #[default]
    Both,
}

impl FromStr for TrainSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("--stage must be 1, 2 or both, got `{other}`"))),
        }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    run_dir: PathBuf,
    world: Option<ToyWorld>,
    splits: Option<ToySplits>,
}

impl Pipeline {
    /// Creates (or reopens) the run directory for `cfg` under `out`.
    pub fn create(cfg: RunConfig, out: &Path) -> Result<Self> {
        let run_dir = out.join(cfg.run_id());
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        write_atomic(&run_dir.join(CONFIG_ECHO), cfg.to_toml().as_bytes())?;
        Ok(Self {
            cfg,
            run_dir,
            world: None,
            splits: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(stage.dir_name())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.stage_dir(Stage::Train).join(stages::FINAL_CHECKPOINT)
    }

    /// Whether `stage`'s outputs are complete on disk.
    pub fn is_complete(&self, stage: Stage) -> bool {
        let dir = self.stage_dir(stage);
        match stage {
            Stage::Train => RunManifest::exists(&dir) && self.checkpoint_dir().join("manifest.json").is_file(),
            _ => RunManifest::exists(&dir),
        }
    }

    /// Curation is recomputed in memory wherever a stage needs the splits;
    /// it is deterministic and cheap next to training.
    fn ensure_splits(&mut self) -> Result<()> {
        if self.world.is_none() {
            self.world = Some(ToyWorld::new(self.cfg.data.clone(), self.cfg.provider.clone())?);
        }
        if self.splits.is_none() {
            let world = self.world.as_ref().expect("just set");
            self.splits = Some(toy::curate(world, &self.cfg.curation, self.cfg.seed)?);
        }
        Ok(())
    }

    /// Config, world and splits; call [`Self::ensure_splits`] first.
    fn parts(&self) -> (&RunConfig, &ToyWorld, &ToySplits) {
        (
            &self.cfg,
            self.world.as_ref().expect("ensure_splits ran"),
            self.splits.as_ref().expect("ensure_splits ran"),
        )
    }

    /// Fails with `StageDependency` unless every requirement of every
    /// requested stage is either on disk or scheduled earlier.
    pub fn check_dependencies(&self, stages: &[Stage]) -> Result<()> {
        for (i, &stage) in stages.iter().enumerate() {
            for &dep in stage.requires() {
                if !stages[..i].contains(&dep) && !self.is_complete(dep) {
                    return Err(Error::StageDependency {
                        stage: stage.to_string(),
                        missing: dependency_hint(dep),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn run(&mut self, stages: &[Stage]) -> Result<Vec<RunManifest>> {
        self.check_dependencies(stages)?;
        stages.iter().map(|&s| self.run_stage(s)).collect()
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<RunManifest> {
        if stage == Stage::Train {
            return self.train(TrainSelection::Both);
        }
        self.check_dependencies(&[stage])?;
        let dir = self.fresh_stage_dir(stage, false)?;
        let started = Instant::now();
        let outcome = match stage {
            Stage::Curate => self.curate_stage(&dir),
            Stage::Bank => self.bank_stage(&dir),
            Stage::Sample => self.sample_stage(&dir),
            Stage::Eval => self.eval_stage(&dir),
            Stage::Ablate => self.ablate_stage(&dir),
            Stage::Train => unreachable!("handled above"),
        };
        self.finish(stage, &dir, started, outcome)
    }

    /// The train stage with an explicit stage selection. Stage 2 alone
    /// resumes from the stage-1 checkpoint already in the run directory.
    pub fn train(&mut self, which: TrainSelection) -> Result<RunManifest> {
        self.check_dependencies(&[Stage::Train])?;
        let stage1_dir = self.stage_dir(Stage::Train).join(stages::STAGE1_CHECKPOINT);
        if which == TrainSelection::Two && !stage1_dir.join("manifest.json").is_file() {
            return Err(Error::StageDependency {
                stage: "train".into(),
                missing: "a stage-1 checkpoint (run `train --stage 1` first)".into(),
            });
        }
        let dir = self.fresh_stage_dir(Stage::Train, which == TrainSelection::Two)?;
        let started = Instant::now();
        let outcome = self.train_stage(&dir, which);
        self.finish(Stage::Train, &dir, started, outcome)
    }

    fn fresh_stage_dir(&self, stage: Stage, keep_stage1: bool) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            if keep_stage1 {
                for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                    let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                    let name = path.file_name().and_then(|n| n.to_str());
                    if name == Some(stages::STAGE1_CHECKPOINT) || name == Some(stages::STAGE1_LOSSES) {
                        continue;
                    }
                    let removed = if path.is_dir() { fs::remove_dir_all(&path) } else { fs::remove_file(&path) };
                    removed.map_err(|e| Error::io(&path, e))?;
                }
            } else {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn finish(&self, stage: Stage, dir: &Path, started: Instant, outcome: Result<()>) -> Result<RunManifest> {
        outcome.map_err(|e| match e {
            Error::Config(_) | Error::StageDependency { .. } | Error::StageFailure { .. } => e,
            other => Error::StageFailure {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        })?;
        let manifest = RunManifest {
            stage,
            config_hash: self.cfg.hash(),
            code_version: CODE_VERSION.to_string(),
            seed: self.cfg.seed,
            elapsed_ms: started.elapsed().as_millis() as u64,
            artifacts: checksum_artifacts(dir)?,
        };
        manifest.write(dir)?;
        Ok(manifest)
    }
}

fn dependency_hint(dep: Stage) -> String {
    match dep {
        Stage::Train => "a trained checkpoint (run the train stage first)".into(),
        other => format!("outputs of the {other} stage"),
    }
}

/// Loads `config_path`, applies an optional seed override and runs `stages`
/// in order. Returns the run directory and the manifests written.
pub fn run_pipeline(
    config_path: &Path,
    out: &Path,
    stages: &[Stage],
    seed: Option<u64>,
) -> Result<(PathBuf, Vec<RunManifest>)> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut p = Pipeline::create(cfg, out)?;
    let manifests = p.run(stages)?;
    Ok((p.run_dir().to_path_buf(), manifests))
}
