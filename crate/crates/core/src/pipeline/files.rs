//! File-driven entry points used outside a pipeline run: curation of an
//! image directory or feature matrix, and bank assembly from matrices.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bank::{extract_vocabulary, save_bank, BankInputs, BankManifest, PrototypeBank};
use crate::codec;
use crate::curation::{self, GrayImage};
use crate::embed::ProviderSpec;
use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;
use crate::toy::{BankPlan, CurationPlan};

/// Ids kept at each step, all indexing the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationLists {
    pub names: Vec<String>,
    pub deduped: Vec<usize>,
    pub sharp: Vec<usize>,
    /// Cluster label of each `sharp` id.
    pub clusters: Vec<usize>,
    pub refined: Vec<usize>,
}

fn pixel_features(images: &[GrayImage]) -> Result<FeatureMatrix> {
    let (w, h) = (images[0].width(), images[0].height());
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::ShapeMismatch(format!(
                "images must share one size to be compared without a feature matrix ({w}x{h} vs {}x{})",
                img.width(),
                img.height()
            )));
        }
        rows.push((0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| img.get(x, y)).collect());
    }
    FeatureMatrix::from_rows(&rows)
}

/// Dedup (features, or raw pixels when only images are given), sharpness
/// filter (images only), then k-means and proportional sampling of the
/// refined subset. Clustering is skipped when fewer rows survive than
/// `plan.clusters`.
pub fn curate_inputs(
    images: Option<&Path>,
    features: Option<&Path>,
    plan: &CurationPlan,
    seed: u64,
) -> Result<CurationLists> {
    let loaded: Option<(Vec<String>, Vec<GrayImage>)> = match images {
        Some(dir) => {
            let paths = curation::list_images(dir)?;
            let names = paths
                .iter()
                .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
                .collect();
            let imgs = paths.iter().map(|p| GrayImage::load(p)).collect::<Result<Vec<_>>>()?;
            Some((names, imgs))
        }
        None => None,
    };
    let feats = match (features, &loaded) {
        (Some(p), _) => codec::read_matrix(p)?,
        (None, Some((_, imgs))) if !imgs.is_empty() => pixel_features(imgs)?,
        (None, Some(_)) => return Err(Error::EmptyInput),
        (None, None) => return Err(Error::InvalidArgument("curate needs --images or --features".into())),
    };
    if let Some((_, imgs)) = &loaded {
        if imgs.len() != feats.rows() {
            return Err(Error::CountMismatch {
                left: imgs.len(),
                right: feats.rows(),
            });
        }
    }
    let names = match &loaded {
        Some((names, _)) => names.clone(),
        None => (0..feats.rows()).map(|i| i.to_string()).collect(),
    };
    let deduped = curation::dedup(&feats, plan.dedup_threshold)?;
    let sharp = match &loaded {
        Some((_, imgs)) => {
            let kept: Vec<GrayImage> = deduped.iter().map(|&i| imgs[i].clone()).collect();
            curation::sharpness_filter(&kept, plan.keep_fraction)?
                .into_iter()
                .map(|j| deduped[j])
                .collect()
        }
        None => deduped.clone(),
    };
    let (clusters, refined) = if sharp.len() >= plan.clusters && plan.clusters > 0 {
        let a = curation::kmeans(&feats.gather(&sharp)?, plan.clusters, seed, plan.kmeans_iters, 1e-9)?;
        let n = plan.refined_size.min(sharp.len());
        let picked = curation::proportional_sample(&a, n, seed)?;
        (a.labels, picked.into_iter().map(|j| sharp[j]).collect())
    } else {
        (Vec::new(), sharp.clone())
    };
    Ok(CurationLists {
        names,
        deduped,
        sharp,
        clusters,
        refined,
    })
}

impl CurationLists {
    /// `names.txt` plus one newline-delimited id list per step.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines = |ids: &[usize]| ids.iter().map(|i| format!("{i}\n")).collect::<String>();
        let names: String = self.names.iter().enumerate().map(|(i, n)| format!("{i}\t{n}\n")).collect();
        let mut written = Vec::new();
        for (file, body) in [
            ("names.txt", names),
            ("deduped.txt", lines(&self.deduped)),
            ("sharp.txt", lines(&self.sharp)),
            ("clusters.txt", lines(&self.clusters)),
            ("refined.txt", lines(&self.refined)),
        ] {
            let path = dir.join(file);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Matrices and captions for a bank built outside the toy pipeline.
#[derive(Debug, Clone)]
pub struct BankFiles {
    pub captions: PathBuf,
    pub text: PathBuf,
    pub vision: PathBuf,
    pub proto: PathBuf,
    /// Optional vocabulary allow-list, one term per line.
    pub allow: Option<PathBuf>,
    /// Recorded as the bank's query encoder; defaults to hash-text at the
    /// text-index width.
    pub provider: Option<ProviderSpec>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .lines()
        .map(str::to_string)
        .collect())
}

pub fn bank_from_files(files: &BankFiles, plan: &BankPlan, seed: u64, out: &Path) -> Result<BankManifest> {
    let captions = read_lines(&files.captions)?;
    let text = codec::read_matrix(&files.text)?.normalized_rows()?;
    let vision = codec::read_matrix(&files.vision)?.normalized_rows()?;
    let proto = codec::read_matrix(&files.proto)?;
    let mut vocab = extract_vocabulary(&captions, plan.vocab_size, plan.max_ngram)?;
    if let Some(allow) = &files.allow {
        let terms: Vec<String> = read_lines(allow)?
            .into_iter()
            .map(|t| t.trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        vocab = vocab.filter_allowed(&terms);
    }
    let provider = files.provider.clone().unwrap_or(ProviderSpec::HashText {
        dim: text.dim(),
        ngram: 3,
        seed: 0,
    });
    let bank = PrototypeBank::build(BankInputs {
        captions,
        text_vectors: text,
        vision_vectors: vision,
        proto,
        vocab,
        seed,
        provider: Some(provider),
    })?;
    save_bank(&bank, out)
}
