//! Per-stage manifests and run comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checksum::sha256_file;
use crate::error::{Error, Result};

use super::Stage;

pub const STAGE_MANIFEST: &str = "stage.json";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written last, atomically, once a stage's artifacts are on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub stage: Stage,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub elapsed_ms: u64,
    /// Path relative to the stage directory → SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

/// Every regular file under `dir` except the manifest, as sorted relative paths.
pub fn list_artifacts(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let rel = rel.to_string_lossy().replace('\\', "/");
                if rel != STAGE_MANIFEST && !rel.ends_with(".tmp") {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn checksum_artifacts(dir: &Path) -> Result<BTreeMap<String, String>> {
    list_artifacts(dir)?
        .into_iter()
        .map(|rel| Ok((rel.clone(), sha256_file(&dir.join(&rel))?)))
        .collect()
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunManifest {
    pub fn write(&self, stage_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&stage_dir.join(STAGE_MANIFEST), text.as_bytes())
    }

    pub fn read(stage_dir: &Path) -> Result<Self> {
        let path = stage_dir.join(STAGE_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn exists(stage_dir: &Path) -> bool {
        stage_dir.join(STAGE_MANIFEST).is_file()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Divergence {
    /// The stage completed in one run only.
    StageMissing { stage: Stage, present_in: char },
    /// A file is absent from one run or its content differs.
    File { stage: Stage, file: String, detail: String },
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::StageMissing { stage, present_in } => {
                write!(f, "stage {stage}: completed only in run {present_in}")
            }
            Divergence::File { stage, file, detail } => write!(f, "stage {stage}: {file}: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReproOutcome {
    Equal { stages: Vec<Stage> },
    Diverged(Divergence),
}

impl ReproOutcome {
    pub fn is_equal(&self) -> bool {
        matches!(self, ReproOutcome::Equal { .. })
    }
}

/// Compares two run directories stage by stage in pipeline order. Files
/// are re-hashed from disk, so tampering after a manifest was written is
/// still caught.
pub fn verify_repro(a: &Path, b: &Path) -> Result<ReproOutcome> {
    for dir in [a, b] {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "not a run directory")));
        }
    }
    let mut compared = Vec::new();
    for stage in Stage::ALL {
        let (da, db) = (a.join(stage.dir_name()), b.join(stage.dir_name()));
        match (RunManifest::exists(&da), RunManifest::exists(&db)) {
            (false, false) => continue,
            (true, false) => return Ok(ReproOutcome::Diverged(Divergence::StageMissing { stage, present_in: 'a' })),
            (false, true) => return Ok(ReproOutcome::Diverged(Divergence::StageMissing { stage, present_in: 'b' })),
            (true, true) => {}
        }
        let (sa, sb) = (checksum_artifacts(&da)?, checksum_artifacts(&db)?);
        let mut files: Vec<&String> = sa.keys().chain(sb.keys()).collect();
        files.sort();
        files.dedup();
        for file in files {
            let detail = match (sa.get(file), sb.get(file)) {
                (Some(x), Some(y)) if x == y => continue,
                (Some(x), Some(y)) => format!("sha256 {} vs {}", &x[..12], &y[..12]),
                (Some(_), None) => "missing in run b".to_string(),
                (None, _) => "missing in run a".to_string(),
            };
            return Ok(ReproOutcome::Diverged(Divergence::File {
                stage,
                file: file.clone(),
                detail,
            }));
        }
        compared.push(stage);
    }
    Ok(ReproOutcome::Equal { stages: compared })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage_dir(root: &Path, stage: Stage, files: &[(&str, &str)]) {
        let d = root.join(stage.dir_name());
        fs::create_dir_all(&d).unwrap();
        for (name, body) in files {
            let p = d.join(name);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, body).unwrap();
        }
        RunManifest {
            stage,
            config_hash: "h".into(),
            code_version: CODE_VERSION.into(),
            seed: 0,
            elapsed_ms: 5,
            artifacts: checksum_artifacts(&d).unwrap(),
        }
        .write(&d)
        .unwrap();
    }

    #[test]
    fn artifacts_exclude_manifest_and_recurse() {
        let t = tempfile::tempdir().unwrap();
        stage_dir(t.path(), Stage::Train, &[("a.txt", "1"), ("sub/b.bin", "2")]);
        let d = t.path().join("train");
        assert_eq!(list_artifacts(&d).unwrap(), vec!["a.txt", "sub/b.bin"]);
        assert_eq!(RunManifest::read(&d).unwrap().artifacts.len(), 2);
        assert!(!d.join("stage.json.tmp").exists());
    }

    #[test]
    fn equal_runs_and_first_divergence() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for root in [a.path(), b.path()] {
            stage_dir(root, Stage::Curate, &[("ids.txt", "1\n2\n")]);
            stage_dir(root, Stage::Sample, &[("latents.bin", "xyz")]);
        }
        assert_eq!(
            verify_repro(a.path(), b.path()).unwrap(),
            ReproOutcome::Equal { stages: vec![Stage::Curate, Stage::Sample] }
        );
        fs::write(b.path().join("sample/latents.bin"), "xyZ").unwrap();
        match verify_repro(a.path(), b.path()).unwrap() {
            ReproOutcome::Diverged(Divergence::File { stage, file, .. }) => {
                assert_eq!((stage, file.as_str()), (Stage::Sample, "latents.bin"))
            }
            other => panic!("{other:?}"),
        }
        fs::remove_dir_all(b.path().join("sample")).unwrap();
        assert!(matches!(
            verify_repro(a.path(), b.path()).unwrap(),
            ReproOutcome::Diverged(Divergence::StageMissing { stage: Stage::Sample, present_in: 'a' })
        ));
        assert!(verify_repro(a.path(), &a.path().join("nope")).is_err());
    }
}
