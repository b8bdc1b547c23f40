//! Stage bodies and the toy-task evaluation shared by `eval` and `ablate`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, Axis};

use crate::autograd::Mat;
use crate::bank::{load_bank, save_bank, PrototypeBank};
use crate::codec;
use crate::error::{Error, Result};
use crate::eval::{
    ablate_km, ablate_retrieval, alignment_score, fid, kid, leakage_check, linear_probe, retrieval_metrics,
    LabeledFeatures, MetricReport, ProbeSplit, RankedRetrieval, SamplingPipeline,
};
use crate::flowmatch::{
    load_checkpoint, run_single_stage, save_checkpoint, Checkpoint, Generator, SampleConfig, StageReport,
};
use crate::linalg::FeatureMatrix;
use crate::retrieval::{hybrid_retrieve, RetrievalConfig, RetrievalMode, RetrievalResult};
use crate::rng::{derive_seed, SeededRng};
use crate::toy::{self, ToySplits, ToyWorld, CLASS_MEANS};

use super::{Pipeline, RunConfig, TrainSelection};

pub(super) const STAGE1_CHECKPOINT: &str = "stage1";
pub(super) const STAGE1_LOSSES: &str = "losses-stage1.txt";
pub(super) const FINAL_CHECKPOINT: &str = "final";
const LATENTS: &str = "latents.bin";
const LABELS: &str = "labels.txt";
const PROMPTS: &str = "prompts.txt";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn id_lines(ids: &[usize]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

fn loss_lines(report: &StageReport) -> String {
    report.losses.iter().enumerate().map(|(i, l)| format!("{i}\t{l:e}\n")).collect()
}

/// Latents drawn for each toy prompt under one retrieval setting.
#[derive(Debug, Clone)]
pub struct PromptSamples {
    /// `(class, caption)` per prompt, in [`ToyWorld::captions`] order.
    pub prompts: Vec<(usize, String)>,
    pub latents: Vec<Mat>,
    pub retrievals: Vec<RetrievalResult>,
}

impl PromptSamples {
    pub fn stacked(&self) -> Mat {
        let views: Vec<_> = self.latents.iter().map(|m| m.view()).collect();
        concatenate(Axis(0), &views).expect("equal widths")
    }

    /// Prompt index of every stacked row.
    pub fn row_labels(&self) -> Vec<usize> {
        self.latents
            .iter()
            .enumerate()
            .flat_map(|(p, m)| std::iter::repeat_n(p, m.nrows()))
            .collect()
    }

    pub fn ps_len_mean(&self) -> f64 {
        self.retrievals.iter().map(|r| r.len() as f64).sum::<f64>() / self.retrievals.len().max(1) as f64
    }
}

/// Retrieves and samples `per_prompt` latents for every toy prompt.
pub fn sample_prompts(
    gen: &Generator,
    bank: &PrototypeBank,
    world: &ToyWorld,
    retrieval: &RetrievalConfig,
    per_prompt: usize,
    sampler: impl Fn(usize) -> SampleConfig,
) -> Result<PromptSamples> {
    let mut out = PromptSamples {
        prompts: Vec::new(),
        latents: Vec::new(),
        retrievals: Vec::new(),
    };
    for (i, (class, caption)) in ToyWorld::captions().enumerate() {
        let r = hybrid_retrieve(caption, bank, retrieval, world.provider())?;
        let input = gen.condition_input(caption, r.features.as_array().clone())?;
        out.latents.push(gen.sample(&input, per_prompt, &sampler(i))?);
        out.prompts.push((class, caption.to_string()));
        out.retrievals.push(r);
    }
    Ok(out)
}

/// Reads a sample stage directory back into per-prompt latents.
pub fn read_samples(dir: &Path) -> Result<PromptSamples> {
    let all = codec::read_matrix(&dir.join(LATENTS))?.into_array();
    let labels_path = dir.join(LABELS);
    let labels: Vec<usize> = fs::read_to_string(&labels_path)
        .map_err(|e| Error::io(&labels_path, e))?
        .lines()
        .map(|l| l.trim().parse().map_err(|_| Error::format(&labels_path, format!("bad label `{l}`"))))
        .collect::<Result<_>>()?;
    if labels.len() != all.nrows() {
        return Err(Error::CountMismatch {
            left: labels.len(),
            right: all.nrows(),
        });
    }
    let prompts_path = dir.join(PROMPTS);
    let mut prompts = Vec::new();
    for line in fs::read_to_string(&prompts_path).map_err(|e| Error::io(&prompts_path, e))?.lines() {
        let mut parts = line.splitn(3, '\t');
        let (_, class, caption) = (parts.next(), parts.next(), parts.next());
        let class = class
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::format(&prompts_path, format!("bad line `{line}`")))?;
        prompts.push((class, caption.unwrap_or_default().to_string()));
    }
    let mut latents = Vec::with_capacity(prompts.len());
    for p in 0..prompts.len() {
        let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == p).collect();
        latents.push(all.select(Axis(0), &rows));
    }
    Ok(PromptSamples {
        prompts,
        latents,
        retrievals: Vec::new(),
    })
}

/// Distance of each prompt's sample mean to its class mean.
fn mean_errors(samples: &PromptSamples) -> Vec<f64> {
    samples
        .latents
        .iter()
        .zip(&samples.prompts)
        .map(|(z, (class, _))| {
            let m = z.mean_axis(Axis(0)).expect("non-empty samples");
            let t = CLASS_MEANS[*class];
            ((m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2)).sqrt()
        })
        .collect()
}

/// Image embeddings of the held-out test items.
fn real_test_images(world: &ToyWorld, splits: &ToySplits) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = splits.test.iter().map(|&i| world.image_embedding(&splits.pool[i].latent)).collect();
    FeatureMatrix::from_rows(&rows)
}

/// Fidelity and alignment of `samples` against the real test images.
pub fn toy_metrics(world: &ToyWorld, samples: &PromptSamples, real: &FeatureMatrix, seed: u64) -> Result<MetricReport> {
    let mut report = MetricReport::new();
    let mut caption_rows = Vec::new();
    for ((_, caption), z) in samples.prompts.iter().zip(&samples.latents) {
        let e = world.caption_embedding(caption)?;
        caption_rows.extend(std::iter::repeat_n(e, z.nrows()));
    }
    let generated = world.image_embeddings(&samples.stacked())?;
    report.set("alignment", alignment_score(&FeatureMatrix::from_rows(&caption_rows)?, &generated)?)?;
    report.set("fid", fid(&generated, real)?)?;
    report.set("kid", kid(&generated, real, derive_seed(seed, "kid"))?)?;
    let errs = mean_errors(samples);
    report.set("mean_error.max", errs.iter().cloned().fold(0.0, f64::max))?;
    report.set("mean_error.avg", errs.iter().sum::<f64>() / errs.len() as f64)?;
    if !samples.retrievals.is_empty() {
        report.set("ps_len_mean", samples.ps_len_mean())?;
    }
    Ok(report)
}

/// Sampling pipeline over a trained toy checkpoint, for the ablation sweeps.
pub struct ToySampler<'a> {
    pub generator: &'a Generator,
    pub bank: &'a PrototypeBank,
    pub world: &'a ToyWorld,
    pub real: FeatureMatrix,
    pub base: RetrievalConfig,
    pub per_prompt: usize,
    pub sampler: SampleConfig,
}

impl SamplingPipeline for ToySampler<'_> {
    fn base_retrieval(&self) -> RetrievalConfig {
        self.base
    }

    fn evaluate(&mut self, retrieval: &RetrievalConfig) -> Result<MetricReport> {
        let base = self.sampler.clone();
        let samples = sample_prompts(self.generator, self.bank, self.world, retrieval, self.per_prompt, |i| {
            SampleConfig {
                seed: derive_seed(base.seed, &format!("prompt-{i}")),
                ..base.clone()
            }
        })?;
        toy_metrics(self.world, &samples, &self.real, base.seed)
    }
}

impl Pipeline {
    pub(super) fn curate_stage(&mut self, dir: &Path) -> Result<()> {
        self.ensure_splits()?;
        let (cfg, _, s) = self.parts();
        for (name, ids) in [
            ("deduped.txt", &s.deduped),
            ("sharp.txt", &s.sharp),
            ("clusters.txt", &s.clusters.labels),
            ("refined.txt", &s.refined),
            ("stage1.txt", &s.stage1),
            ("bank.txt", &s.bank),
            ("test.txt", &s.test),
            ("finetune.txt", &s.finetune),
        ] {
            write_text(&dir.join(name), &id_lines(ids))?;
        }
        let l = &s.leakage;
        let mut report = MetricReport::new()
            .with("max", l.max)?
            .with("mean", l.mean)?
            .with("std", l.std)?
            .with("pairs", l.pairs as f64)?
            .with("offending", l.offending.len() as f64)?;
        report.set_meta("verdict", l.verdict());
        report.set_meta("threshold", cfg.eval.leakage_threshold.to_string());
        report.write(&dir.join("leakage.txt"))?;
        Ok(())
    }

    pub(super) fn bank_stage(&mut self, dir: &Path) -> Result<()> {
        self.ensure_splits()?;
        let (cfg, world, splits) = self.parts();
        let bank = toy::build_bank(world, splits, &cfg.bank, cfg.seed)?;
        save_bank(&bank, dir)?;
        Ok(())
    }

    fn load_bank(&self) -> Result<PrototypeBank> {
        load_bank(&self.stage_dir(super::Stage::Bank))
    }

    pub(super) fn train_stage(&mut self, dir: &Path, which: TrainSelection) -> Result<()> {
        self.ensure_splits()?;
        let bank = self.load_bank()?;
        let (cfg, world, splits) = self.parts();
        let retrieval = cfg.retrieval_config();
        let (c1, c2) = (cfg.train_config(1), cfg.train_config(2));
        let stage1_dir = dir.join(STAGE1_CHECKPOINT);
        if which != TrainSelection::Two {
            let mut gen = Generator::new(cfg.generator_config())?;
            let data = toy::flow_dataset(&gen, world, &bank, &retrieval, &splits.items(&splits.stage1))?;
            let report = run_single_stage(&mut gen, &data, &c1)?;
            write_text(&dir.join(STAGE1_LOSSES), &loss_lines(&report))?;
            save_checkpoint(&Checkpoint::new(gen, vec![c1.clone()]), &stage1_dir)?;
        }
        if which == TrainSelection::One {
            return Ok(());
        }
        // Stage 2 always resumes from the stored (f32) stage-1 weights, so a
        // split run and a combined run produce the same final checkpoint.
        let mut gen = load_checkpoint(&stage1_dir)?.generator;
        let data = toy::flow_dataset(&gen, world, &bank, &retrieval, &splits.items(&splits.finetune))?;
        let report = run_single_stage(&mut gen, &data, &c2)?;
        write_text(&dir.join("losses-stage2.txt"), &loss_lines(&report))?;
        save_checkpoint(&Checkpoint::new(gen, vec![c1, c2]), &dir.join(FINAL_CHECKPOINT))?;
        Ok(())
    }

    pub(super) fn sample_stage(&mut self, dir: &Path) -> Result<()> {
        self.ensure_splits()?;
        let bank = self.load_bank()?;
        let gen = load_checkpoint(&self.checkpoint_dir())?.generator;
        let (cfg, world, _) = self.parts();
        let samples = sample_prompts(&gen, &bank, world, &cfg.retrieval_config(), cfg.sample.per_prompt, |i| {
            cfg.sample_config(i)
        })?;
        codec::write_matrix(&dir.join(LATENTS), &FeatureMatrix::from_array(samples.stacked())?)?;
        write_text(&dir.join(LABELS), &id_lines(&samples.row_labels()))?;
        let mut prompts = String::new();
        let mut retrieved = String::new();
        let mut summary = String::from("prompt\tn\tmean_x\tmean_y\tstd_x\tstd_y\tmean_error\tps_len\n");
        let errs = mean_errors(&samples);
        for (p, ((class, caption), z)) in samples.prompts.iter().zip(&samples.latents).enumerate() {
            writeln!(prompts, "{p}\t{class}\t{caption}").expect("string write");
            writeln!(retrieved, "# {p}\t{caption}\n{}", samples.retrievals[p].report()).expect("string write");
            let m = z.mean_axis(Axis(0)).expect("non-empty");
            let s = z.std_axis(Axis(0), 0.0);
            writeln!(
                summary,
                "{p}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                z.nrows(),
                m[0],
                m[1],
                s[0],
                s[1],
                errs[p],
                samples.retrievals[p].len()
            )
            .expect("string write");
        }
        write_text(&dir.join(PROMPTS), &prompts)?;
        write_text(&dir.join("retrieval.txt"), &retrieved)?;
        write_text(&dir.join("summary.txt"), &summary)?;
        Ok(())
    }

    pub(super) fn eval_stage(&mut self, dir: &Path) -> Result<()> {
        self.ensure_splits()?;
        let samples = read_samples(&self.stage_dir(super::Stage::Sample))?;
        let (cfg, world, splits) = self.parts();
        let real = real_test_images(world, splits)?;
        let mut report = toy_metrics(world, &samples, &real, cfg.seed)?;
        for (p, e) in mean_errors(&samples).iter().enumerate() {
            report.set(format!("mean_error.prompt{p}"), *e)?;
        }
        paired_retrieval(&mut report, cfg, world, splits, &samples, &real)?;
        if cfg.eval.probe {
            probes(&mut report, cfg, world, splits, &samples, &real)?;
        }
        let l = leakage_check(
            &splits.proto_matrix(&splits.bank)?,
            &splits.proto_matrix(&splits.test)?,
            cfg.eval.leakage_threshold,
        )?;
        report.set("leakage.max", l.max)?;
        report.set("leakage.mean", l.mean)?;
        report.set_meta("leakage", l.verdict());
        report.set_meta("guidance_scale", cfg.sample.guidance_scale.to_string());
        report.write(&dir.join("report.txt"))?;
        Ok(())
    }

    pub(super) fn ablate_stage(&mut self, dir: &Path) -> Result<()> {
        let (km, modes) = (self.cfg.ablate.km_values.clone(), self.cfg.ablate.modes.clone());
        self.ablate_into(dir, &km, &modes)
    }

    /// Runs the prototype-budget sweep over `km_values` and the branch
    /// sweep over `modes` against the run's checkpoint, writing one report
    /// pair per setting into `dir`.
    pub fn ablate_into(&mut self, dir: &Path, km_values: &[usize], modes: &[RetrievalMode]) -> Result<()> {
        self.check_dependencies(&[super::Stage::Ablate])?;
        self.ensure_splits()?;
        let bank = self.load_bank()?;
        let gen = load_checkpoint(&self.checkpoint_dir())?.generator;
        let (cfg, world, splits) = self.parts();
        let mut sampler = ToySampler {
            generator: &gen,
            bank: &bank,
            world,
            real: real_test_images(world, splits)?,
            base: cfg.retrieval_config(),
            per_prompt: cfg.ablate.per_prompt,
            sampler: SampleConfig {
                seed: derive_seed(cfg.seed, "ablate"),
                ..cfg.sample_config(0)
            },
        };
        if !km_values.is_empty() {
            for (km, report) in ablate_km(&mut sampler, km_values)? {
                report.write(&dir.join(format!("km-{km}.txt")))?;
            }
        }
        for (mode, report) in ablate_retrieval(&mut sampler, modes)? {
            report.write(&dir.join(format!("mode-{}.txt", mode.name().replace('+', "-"))))?;
        }
        Ok(())
    }
}

/// One generated latent per test item, taken from that item's prompt.
fn paired_generated(world: &ToyWorld, splits: &ToySplits, samples: &PromptSamples) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let mut used = vec![0usize; samples.prompts.len()];
    let mut captions = Vec::with_capacity(splits.test.len());
    let mut images = Vec::with_capacity(splits.test.len());
    for &i in &splits.test {
        let caption = &splits.pool[i].caption;
        let p = samples
            .prompts
            .iter()
            .position(|(_, c)| c == caption)
            .ok_or_else(|| Error::UnknownId(caption.clone()))?;
        let z = &samples.latents[p];
        let row = z.row(used[p] % z.nrows());
        used[p] += 1;
        captions.push(world.caption_embedding(caption)?);
        images.push(world.image_embedding(row.as_slice().expect("contiguous")));
    }
    Ok((FeatureMatrix::from_rows(&captions)?, FeatureMatrix::from_rows(&images)?))
}

fn paired_retrieval(
    report: &mut MetricReport,
    cfg: &RunConfig,
    world: &ToyWorld,
    splits: &ToySplits,
    samples: &PromptSamples,
    real: &FeatureMatrix,
) -> Result<()> {
    let (captions, generated) = paired_generated(world, splits, samples)?;
    for (name, queries) in [("text2gen", &captions), ("real2gen", real)] {
        let ranked = RankedRetrieval::paired(queries, &generated)?;
        for r in retrieval_metrics(&ranked, &cfg.eval.ks)? {
            report.set(format!("{name}.recall@{}", r.k), r.recall)?;
            report.set(format!("{name}.map@{}", r.k), r.map)?;
        }
    }
    Ok(())
}

/// Generated-to-real and real-to-real linear probes on class labels.
fn probes(
    report: &mut MetricReport,
    cfg: &RunConfig,
    world: &ToyWorld,
    splits: &ToySplits,
    samples: &PromptSamples,
    real: &FeatureMatrix,
) -> Result<()> {
    let seed = derive_seed(cfg.seed, "probe");
    let real_labels: Vec<usize> = splits.test.iter().map(|&i| splits.pool[i].class).collect();
    let real_set = LabeledFeatures::new(real.clone(), real_labels)?;

    let generated = world.image_embeddings(&samples.stacked())?;
    let gen_labels: Vec<usize> = samples.row_labels().iter().map(|&p| samples.prompts[p].0).collect();
    let mut ids: Vec<usize> = (0..gen_labels.len()).collect();
    SeededRng::derive(seed, "g2r-split").shuffle(&mut ids);
    let cut = ids.len() * 4 / 5;
    let subset = |ids: &[usize]| -> Result<LabeledFeatures> {
        LabeledFeatures::new(generated.gather(ids)?, ids.iter().map(|&i| gen_labels[i]).collect())
    };
    let g2r = ProbeSplit {
        train: subset(&ids[..cut])?,
        val: subset(&ids[cut..])?,
        test: real_set.clone(),
    };
    g2r.validate()?;
    let r2r = ProbeSplit::from_shuffled(&real_set, seed)?;
    for (name, split) in [("g2r", g2r), ("r2r", r2r)] {
        let r = linear_probe(&split, seed)?;
        report.set(format!("probe.{name}.f1"), r.weighted_f1)?;
        report.set(format!("probe.{name}.auc"), r.weighted_auc)?;
    }
    Ok(())
}
