//! A two-class synthetic world small enough to train on a CPU in seconds.
//!
//! Each item has a 2-D latent drawn from its class component, a caption
//! built from class templates, a prototype feature (the latent followed by
//! noise channels) and a small texture image whose contrast sets its
//! sharpness. [`curate`] runs the full curation chain over a pool and
//! carves out the prototype bank, a held-out test set and the fine-tuning
//! subset.

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::bank::{extract_vocabulary, BankInputs, PrototypeBank, DEFAULT_TOP_N};
use crate::curation::{self, ClusterAssignment, GrayImage, DEDUP_THRESHOLD, SHARPNESS_KEEP_FRACTION};
use crate::embed::{EmbeddingProvider, ProviderSpec};
use crate::error::{Error, Result};
use crate::eval::{leakage_check, LeakageReport, LEAKAGE_THRESHOLD};
use crate::flowmatch::{FlowDataset, Generator};
use crate::linalg::{l2_normalize, Embedding, FeatureMatrix};
use crate::retrieval::{hybrid_retrieve, RetrievalConfig};
use crate::rng::SeededRng;

pub const CLASS_MEANS: [[f64; 2]; 2] = [[2.0, 0.5], [-1.0, -2.0]];
pub const CLASS_NAMES: [&str; 2] = ["tumor region", "benign stroma"];
pub const CLASS_CAPTIONS: [[&str; 4]; 2] = [
    [
        "tumor region with nuclear atypia",
        "tumor region with mitotic figures",
        "dense tumor nests with nuclear atypia",
        "tumor cells with prominent nucleoli",
    ],
    [
        "benign stroma with fibrosis",
        "benign stroma with loose collagen",
        "fibrous stroma with scattered lymphocytes",
        "benign stroma with smooth muscle",
    ],
];
const BACKGROUND: &str = "background debris artifact";
/// Weight of the background direction in the toy image embedding.
const BACKGROUND_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub pool_size: usize,
    pub proto_dim: usize,
    pub component_std: f64,
    pub duplicate_fraction: f64,
    pub image_size: usize,
    /// Noise added to the class direction of each vision-index vector.
    pub vision_noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            pool_size: 6000,
            proto_dim: 16,
            component_std: 0.35,
            duplicate_fraction: 0.02,
            image_size: 12,
            vision_noise: 0.5,
        }
    }
}

/// Thresholds and split sizes for [`curate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationPlan {
    pub dedup_threshold: f64,
    pub keep_fraction: f64,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub refined_size: usize,
    pub bank_size: usize,
    pub test_size: usize,
}

impl Default for CurationPlan {
    fn default() -> Self {
        Self {
            dedup_threshold: DEDUP_THRESHOLD,
            keep_fraction: SHARPNESS_KEEP_FRACTION,
            clusters: 8,
            kmeans_iters: 100,
            refined_size: 1600,
            bank_size: 64,
            test_size: 256,
        }
    }
}

impl CurationPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return bad("curation.dedup_threshold must lie in (0, 1]".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad("curation.keep_fraction must lie in (0, 1]".into());
        }
        if self.clusters == 0 || self.kmeans_iters == 0 || self.bank_size == 0 || self.test_size == 0 {
            return bad("curation.clusters, kmeans_iters, bank_size and test_size must be positive".into());
        }
        let bank_and_test = self.bank_size + self.test_size;
        if self.refined_size <= bank_and_test {
            return bad(format!(
                "curation.refined_size = {} leaves no fine-tuning items after bank and test ({bank_and_test})",
                self.refined_size
            ));
        }
        Ok(())
    }
}

/// Vocabulary extraction settings for the toy bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankPlan {
    pub vocab_size: usize,
    pub max_ngram: usize,
}

impl Default for BankPlan {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_TOP_N,
            max_ngram: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyItem {
    pub latent: [f64; 2],
    pub class: usize,
    pub caption: String,
    pub proto: Vec<f64>,
    pub image: GrayImage,
}

impl ToyItem {
    pub fn latent_mat(&self) -> Mat {
        Mat::from_shape_vec((1, 2), self.latent.to_vec()).expect("1×2")
    }
}

/// The fixed embedding space shared by captions, bank indices and the
/// alignment metric.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    cfg: ToyConfig,
    provider: EmbeddingProvider,
    spec: ProviderSpec,
    class_dirs: Vec<Vec<f64>>,
    background: Vec<f64>,
}

impl ToyWorld {
    pub fn new(cfg: ToyConfig, provider: ProviderSpec) -> Result<Self> {
        if cfg.proto_dim < 3 {
            return Err(Error::Config("data.proto_dim must be at least 3".into()));
        }
        if cfg.pool_size == 0 || cfg.image_size < 3 {
            return Err(Error::Config("data.pool_size must be positive and data.image_size at least 3".into()));
        }
        let p = EmbeddingProvider::from_spec(&provider)?;
        let encode = |t: &str| -> Result<Vec<f64>> { Ok(l2_normalize(&p.encode_text(t)?)?.into_values()) };
        let class_dirs = CLASS_NAMES.iter().map(|n| encode(n)).collect::<Result<_>>()?;
        let background = encode(BACKGROUND)?;
        Ok(Self {
            cfg,
            provider: p,
            spec: provider,
            class_dirs,
            background,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn provider_spec(&self) -> &ProviderSpec {
        &self.spec
    }

    pub fn captions() -> impl Iterator<Item = (usize, &'static str)> {
        CLASS_CAPTIONS
            .iter()
            .enumerate()
            .flat_map(|(c, caps)| caps.iter().map(move |s| (c, *s)))
    }

    pub fn class_of_caption(caption: &str) -> Option<usize> {
        Self::captions().find(|(_, s)| *s == caption).map(|(c, _)| c)
    }

    pub fn caption_embedding(&self, caption: &str) -> Result<Vec<f64>> {
        Ok(self.provider.encode_text(caption)?.into_values())
    }

    /// Stand-in image encoder: class directions weighted by a unit-width
    /// Gaussian bump around each class mean, plus a fixed background term.
    pub fn image_embedding(&self, z: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.background.iter().map(|v| v * BACKGROUND_WEIGHT).collect();
        for (mean, dir) in CLASS_MEANS.iter().zip(&self.class_dirs) {
            let d2 = (z[0] - mean[0]).powi(2) + (z[1] - mean[1]).powi(2);
            let w = (-0.5 * d2).exp();
            for (o, d) in out.iter_mut().zip(dir) {
                *o += w * d;
            }
        }
        out
    }

    /// Per-row image embeddings of an `n × 2` latent matrix.
    pub fn image_embeddings(&self, latents: &Mat) -> Result<FeatureMatrix> {
        let rows: Vec<Vec<f64>> = latents
            .rows()
            .into_iter()
            .map(|r| self.image_embedding(r.as_slice().expect("contiguous")))
            .collect();
        FeatureMatrix::from_rows(&rows)
    }

    /// Draws the raw pool. About `duplicate_fraction` of items are
    /// near-copies of an earlier item.
    pub fn generate_pool(&self, seed: u64) -> Result<Vec<ToyItem>> {
        let cfg = &self.cfg;
        let mut rng = SeededRng::derive(seed, "toy-pool");
        let mut pool: Vec<ToyItem> = Vec::with_capacity(cfg.pool_size);
        for i in 0..cfg.pool_size {
            if i > 0 && rng.uniform() < cfg.duplicate_fraction {
                let src = pool[rng.below(i)].clone();
                let proto = src.proto.iter().map(|v| v + 1e-3 * rng.normal()).collect();
                pool.push(ToyItem { proto, ..src });
                continue;
            }
            let class = rng.below(2);
            let mean = CLASS_MEANS[class];
            let latent = [
                mean[0] + cfg.component_std * rng.normal(),
                mean[1] + cfg.component_std * rng.normal(),
            ];
            let caption = CLASS_CAPTIONS[class][rng.below(4)].to_string();
            let mut proto = latent.to_vec();
            proto.extend((2..cfg.proto_dim).map(|_| rng.normal()));
            let contrast = 0.05 + 0.95 * rng.uniform();
            let (fx, fy, phase) = (0.8 + rng.uniform(), 0.8 + rng.uniform(), rng.uniform() * 6.283);
            let image = GrayImage::from_fn(cfg.image_size, cfg.image_size, |x, y| {
                0.5 + 0.5 * contrast * (fx * x as f64 + phase).sin() * (fy * y as f64).cos()
            })?;
            pool.push(ToyItem {
                latent,
                class,
                caption,
                proto,
                image,
            });
        }
        Ok(pool)
    }

    /// Text index from the caption encoder; vision index from a noisy
    /// class direction in the same space.
    pub fn bank_inputs(&self, items: &[&ToyItem], plan: &BankPlan, seed: u64) -> Result<BankInputs> {
        let captions: Vec<String> = items.iter().map(|it| it.caption.clone()).collect();
        let mut rng = SeededRng::derive(seed, "toy-vision");
        let mut text = Vec::with_capacity(items.len());
        let mut vision = Vec::with_capacity(items.len());
        for it in items {
            text.push(self.caption_embedding(&it.caption)?);
            let dir = &self.class_dirs[it.class];
            let scale = self.cfg.vision_noise / (dir.len() as f64).sqrt();
            let v: Vec<f64> = dir
                .iter()
                .map(|d| d + scale * rng.normal())
                .collect();
            vision.push(l2_normalize(&Embedding::new(v)?)?.into_values());
        }
        let proto: Vec<Vec<f64>> = items.iter().map(|it| it.proto.clone()).collect();
        Ok(BankInputs {
            vocab: extract_vocabulary(&captions, plan.vocab_size, plan.max_ngram)?,
            captions,
            text_vectors: FeatureMatrix::from_rows(&text)?,
            vision_vectors: FeatureMatrix::from_rows(&vision)?,
            proto: FeatureMatrix::from_rows(&proto)?,
            seed,
            provider: Some(self.spec.clone()),
        })
    }
}

/// Index sets produced by curation, all referring to the raw pool.
#[derive(Debug, Clone)]
pub struct ToySplits {
    pub pool: Vec<ToyItem>,
    pub deduped: Vec<usize>,
    pub sharp: Vec<usize>,
    /// Clusters over the sharp items, indexed like `sharp`.
    pub clusters: ClusterAssignment,
    pub refined: Vec<usize>,
    /// Deduplicated items outside the refined subset.
    pub stage1: Vec<usize>,
    pub bank: Vec<usize>,
    pub test: Vec<usize>,
    pub finetune: Vec<usize>,
    pub leakage: LeakageReport,
}

impl ToySplits {
    pub fn items(&self, ids: &[usize]) -> Vec<&ToyItem> {
        ids.iter().map(|&i| &self.pool[i]).collect()
    }

    pub fn proto_matrix(&self, ids: &[usize]) -> Result<FeatureMatrix> {
        let rows: Vec<Vec<f64>> = ids.iter().map(|&i| self.pool[i].proto.clone()).collect();
        FeatureMatrix::from_rows(&rows)
    }
}

/// Dedup, sharpness filter, clustering and the rare-first carve-outs.
pub fn curate(world: &ToyWorld, plan: &CurationPlan, seed: u64) -> Result<ToySplits> {
    plan.validate()?;
    let cfg = plan;
    let pool = world.generate_pool(seed)?;
    let protos = FeatureMatrix::from_rows(&pool.iter().map(|it| it.proto.clone()).collect::<Vec<_>>())?;
    let deduped = curation::dedup(&protos, plan.dedup_threshold)?;

    let images: Vec<GrayImage> = deduped.iter().map(|&i| pool[i].image.clone()).collect();
    let sharp: Vec<usize> = curation::sharpness_filter(&images, plan.keep_fraction)?
        .into_iter()
        .map(|j| deduped[j])
        .collect();

    let sharp_protos = protos.gather(&sharp)?;
    let clusters = curation::kmeans(&sharp_protos, cfg.clusters, seed, cfg.kmeans_iters, 1e-9)?;
    let refined_local = curation::proportional_sample(&clusters, cfg.refined_size, seed)?;
    let refined: Vec<usize> = refined_local.iter().map(|&j| sharp[j]).collect();

    let mut in_refined = vec![false; pool.len()];
    for &i in &refined {
        in_refined[i] = true;
    }
    let stage1: Vec<usize> = deduped.iter().copied().filter(|&i| !in_refined[i]).collect();

    let sub_labels: Vec<usize> = refined_local.iter().map(|&j| clusters.labels[j]).collect();
    let sub = ClusterAssignment::from_labels(cfg.clusters, sub_labels)?;
    let bank_local = curation::rare_first_sample(&sub, cfg.bank_size, crate::rng::derive_seed(seed, "bank"))?;
    let mut taken = vec![false; refined.len()];
    for &j in &bank_local {
        taken[j] = true;
    }
    let rest: Vec<usize> = (0..refined.len()).filter(|&j| !taken[j]).collect();
    let rest_labels: Vec<usize> = rest.iter().map(|&j| sub.labels[j]).collect();
    let rest_assign = ClusterAssignment::from_labels(cfg.clusters, rest_labels)?;
    let test_local = curation::rare_first_sample(&rest_assign, cfg.test_size, crate::rng::derive_seed(seed, "test"))?;
    let mut in_test = vec![false; rest.len()];
    for &j in &test_local {
        in_test[j] = true;
    }
    let bank: Vec<usize> = bank_local.iter().map(|&j| refined[j]).collect();
    let test: Vec<usize> = test_local.iter().map(|&j| refined[rest[j]]).collect();
    let finetune: Vec<usize> = (0..rest.len())
        .filter(|&j| !in_test[j])
        .map(|j| refined[rest[j]])
        .collect();

    let leakage = leakage_check(&protos.gather(&bank)?, &protos.gather(&test)?, LEAKAGE_THRESHOLD)?;
    Ok(ToySplits {
        pool,
        deduped,
        sharp,
        clusters,
        refined,
        stage1,
        bank,
        test,
        finetune,
        leakage,
    })
}

pub fn build_bank(world: &ToyWorld, splits: &ToySplits, plan: &BankPlan, seed: u64) -> Result<PrototypeBank> {
    PrototypeBank::build(world.bank_inputs(&splits.items(&splits.bank), plan, seed)?)
}

/// Retrieves prototypes for every distinct caption once and pairs each
/// item's latent with its caption's condition.
pub fn flow_dataset(
    gen: &Generator,
    world: &ToyWorld,
    bank: &PrototypeBank,
    retrieval: &RetrievalConfig,
    items: &[&ToyItem],
) -> Result<FlowDataset> {
    let mut data = FlowDataset::default();
    let mut prompts: Vec<&str> = Vec::new();
    for it in items {
        let idx = match prompts.iter().position(|p| *p == it.caption) {
            Some(i) => i,
            None => {
                let r = hybrid_retrieve(&it.caption, bank, retrieval, world.provider())?;
                data.conditions
                    .push(gen.condition_input(&it.caption, r.features.into_array())?);
                prompts.push(&it.caption);
                prompts.len() - 1
            }
        };
        data.latents.push(it.latent_mat());
        data.labels.push(idx);
    }
    Ok(data)
}
