//! Checkpoint directory: `manifest.json` plus one `UPBK` file per trainable
//! tensor. Frozen parts are rebuilt from the seeds in the generator config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum::{sha256_file, sha256_hex};
use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;
use crate::nn::ParamSet;

use super::generator::{Generator, GeneratorConfig};
use super::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub generator: GeneratorConfig,
    pub stages: Vec<TrainConfig>,
    pub params: BTreeMap<String, ParamEntry>,
    /// Caller metadata such as retrieval settings and the bank location.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: Generator,
    pub stages: Vec<TrainConfig>,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    /// Snaps parameters to storage precision so a reload is bitwise equal.
    pub fn new(mut generator: Generator, stages: Vec<TrainConfig>) -> Self {
        generator.snap_params();
        Self {
            generator,
            stages,
            extra: serde_json::Value::Null,
        }
    }

    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.extra = extra;
        self
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = BTreeMap::new();
    for (name, value) in ckpt.generator.params().iter() {
        let file = format!("{name}.upbk");
        let m = FeatureMatrix::from_array(value.clone())?;
        let bytes = codec::encode(&m);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        params.insert(
            name.to_string(),
            ParamEntry {
                file,
                rows: m.rows(),
                cols: m.dim(),
                sha256: sha256_hex(&bytes),
            },
        );
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        generator: ckpt.generator.config().clone(),
        stages: ckpt.stages.clone(),
        params,
        extra: ckpt.extra.clone(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_checkpoint_manifest(dir)?;
    let mut params = ParamSet::new();
    for (name, entry) in &manifest.params {
        let path = dir.join(&entry.file);
        if sha256_file(&path)? != entry.sha256 {
            return Err(Error::ChecksumMismatch {
                file: entry.file.clone(),
            });
        }
        let m = codec::read_matrix(&path)?;
        if (m.rows(), m.dim()) != (entry.rows, entry.cols) {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}×{}, manifest says {}×{}",
                entry.file,
                m.rows(),
                m.dim(),
                entry.rows,
                entry.cols
            )));
        }
        params.insert(name.clone(), m.into_array());
    }
    let generator = Generator::from_parts(manifest.generator, params)?;
    Ok(Checkpoint {
        generator,
        stages: manifest.stages,
        extra: manifest.extra,
    })
}
