use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use protoflow::bank::load_bank;
use protoflow::codec;
use protoflow::embed::{EmbeddingProvider, ProviderSpec};
use protoflow::eval::{
    alignment_score, fid, kid, leakage_check, linear_probe, retrieval_metrics, LabeledFeatures, MetricReport,
    ProbeSplit, RankedRetrieval, LEAKAGE_THRESHOLD,
};
use protoflow::flowmatch::{load_checkpoint, SampleConfig};
use protoflow::linalg::FeatureMatrix;
use protoflow::pipeline::{
    bank_from_files, curate_inputs, verify_repro, BankFiles, Pipeline, ReproOutcome, RunConfig, Stage,
    TrainSelection,
};
use protoflow::retrieval::{hybrid_retrieve, RetrievalConfig, RetrievalMode};
use protoflow::{Error, Result};

#[derive(Parser)]
#[command(name = "protoflow", version, about = "Prototype-conditioned flow matching pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root under which the run directory is created.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run pipeline stages in order (default: curate,bank,train,sample,eval).
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
    /// Curate an image directory or feature matrix, or run the curate stage of a config.
    Curate(CurateArgs),
    /// Build a prototype bank from matrices, or run the bank stage of a config.
    Bank(BankArgs),
    /// Hybrid retrieval of prototypes for one prompt.
    Retrieve {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 16)]
        km: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the gathered prototype features (UPBK).
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Train stage 1, stage 2 or both.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "both")]
        stage: TrainSelection,
    },
    /// Sample latents for one prompt from a checkpoint.
    Sample(SampleArgs),
    /// Standalone metrics over UPBK matrices.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the ablation sweeps of a config.
    Ablate(RunArgs),
    /// Compare two run directories artifact by artifact.
    Verify { run_a: PathBuf, run_b: PathBuf },
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Directory of 8-bit grayscale PGM/PNG images.
    #[arg(long, conflicts_with = "config")]
    images: Option<PathBuf>,
    /// Precomputed feature matrix (UPBK), one row per item.
    #[arg(long, conflicts_with = "config")]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    clusters: usize,
    #[arg(long, default_value_t = 1000)]
    refined: usize,
}

#[derive(Args)]
struct BankArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// One caption per line.
    #[arg(long, requires_all = ["text", "vision", "proto"], conflicts_with = "config")]
    captions: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long)]
    vision: Option<PathBuf>,
    #[arg(long)]
    proto: Option<PathBuf>,
    /// Vocabulary allow-list, one term per line.
    #[arg(long)]
    allow: Option<PathBuf>,
    /// Id map (one per line) turning the text matrix into a lookup encoder.
    #[arg(long)]
    feature_ids: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 30)]
    steps: usize,
    /// Guidance scale.
    #[arg(long = "cfg", default_value_t = 3.0)]
    guidance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Bank to retrieve prototypes from; without it the prototype stream is empty.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    km: usize,
    /// Latent output (UPBK); a text summary is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    Fid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Kid {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean caption/image cosine over paired rows.
    Align {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired Recall@k and mAP@k (query i is relevant to gallery row i).
    Retrieval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe; with --test-* the features train the probe and the test set scores it.
    Probe {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, requires = "test_labels")]
        test_features: Option<PathBuf>,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Leakage {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = LEAKAGE_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// K_m sweep against a trained run; reports go to --reports.
    AblateKm {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,4,8,16,32")]
        values: Vec<usize>,
        #[arg(long)]
        reports: PathBuf,
    },
    /// Retrieval-branch sweep against a trained run; reports go to --reports.
    AblateRetrieval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "text-only,vision-only,hybrid-global,local-only,global+local")]
        modes: Vec<RetrievalMode>,
        #[arg(long)]
        reports: PathBuf,
    },
}

fn open_pipeline(run: &RunArgs) -> Result<Pipeline> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    Pipeline::create(cfg, &run.out)
}

fn run_stages(run: &RunArgs, stages: &[Stage]) -> Result<()> {
    let mut p = open_pipeline(run)?;
    for m in p.run(stages)? {
        println!("{}: {} artifacts in {} ms", m.stage, m.artifacts.len(), m.elapsed_ms);
    }
    println!("{}", p.run_dir().display());
    Ok(())
}

fn matrix(path: &Path) -> Result<FeatureMatrix> {
    codec::read_matrix(path)
}

fn labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{}: bad label `{l}`", path.display())))
        })
        .collect()
}

fn emit(report: &MetricReport, out: &Path) -> Result<()> {
    let (txt, json) = report.write(out)?;
    print!("{}", report.to_text());
    eprintln!("wrote {} and {}", txt.display(), json.display());
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Fid { a, b, out } => emit(&MetricReport::new().with("fid", fid(&matrix(&a)?, &matrix(&b)?)?)?, &out),
        EvalCommand::Kid { a, b, seed, out } => {
            emit(&MetricReport::new().with("kid", kid(&matrix(&a)?, &matrix(&b)?, seed)?)?, &out)
        }
        EvalCommand::Align { captions, images, out } => emit(
            &MetricReport::new().with("alignment", alignment_score(&matrix(&captions)?, &matrix(&images)?)?)?,
            &out,
        ),
        EvalCommand::Retrieval { queries, gallery, ks, out } => {
            let ranked = RankedRetrieval::paired(&matrix(&queries)?, &matrix(&gallery)?)?;
            let mut r = MetricReport::new();
            for m in retrieval_metrics(&ranked, &ks)? {
                r.set(format!("recall@{}", m.k), m.recall)?;
                r.set(format!("map@{}", m.k), m.map)?;
            }
            emit(&r, &out)
        }
        EvalCommand::Probe {
            features,
            labels: label_path,
            test_features,
            test_labels,
            seed,
            out,
        } => {
            let data = LabeledFeatures::new(matrix(&features)?, labels(&label_path)?)?;
            let split = match (test_features, test_labels) {
                (Some(tf), Some(tl)) => {
                    let inner = ProbeSplit::from_shuffled(&data, seed)?;
                    let split = ProbeSplit {
                        train: inner.train,
                        val: inner.val,
                        test: LabeledFeatures::new(matrix(&tf)?, labels(&tl)?)?,
                    };
                    split.validate()?;
                    split
                }
                _ => ProbeSplit::from_shuffled(&data, seed)?,
            };
            let p = linear_probe(&split, seed)?;
            let r = MetricReport::new()
                .with("weighted_f1", p.weighted_f1)?
                .with("weighted_auc", p.weighted_auc)?
                .with("iterations", p.iterations as f64)?;
            emit(&r, &out)
        }
        EvalCommand::Leakage { a, b, threshold, out } => {
            let l = leakage_check(&matrix(&a)?, &matrix(&b)?, threshold)?;
            let mut r = MetricReport::new()
                .with("max", l.max)?
                .with("mean", l.mean)?
                .with("std", l.std)?
                .with("pairs", l.pairs as f64)?
                .with("offending", l.offending.len() as f64)?;
            r.set_meta("verdict", l.verdict());
            r.set_meta("threshold", threshold.to_string());
            emit(&r, &out)?;
            let pairs: String = l.offending.iter().map(|p| format!("{}\t{}\t{}\n", p.a, p.b, p.cosine)).collect();
            let path = out.with_extension("pairs.tsv");
            fs::write(&path, pairs).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
        }
        EvalCommand::AblateKm { run, values, reports } => {
            open_pipeline(&run)?.ablate_into(&reports, &values, &[])?;
            println!("{}", reports.display());
            Ok(())
        }
        EvalCommand::AblateRetrieval { run, modes, reports } => {
            open_pipeline(&run)?.ablate_into(&reports, &[], &modes)?;
            println!("{}", reports.display());
            Ok(())
        }
    }
}

fn sample(a: SampleArgs) -> Result<()> {
    let generator = load_checkpoint(&a.checkpoint)?.generator;
    let proto_dim = generator.config().msc.proto_dim;
    let retrieved = match &a.bank {
        Some(dir) => {
            let bank = load_bank(dir)?;
            let spec = bank
                .provider()
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("bank records no query encoder".into()))?;
            let cfg = RetrievalConfig {
                km: a.km,
                seed: a.seed,
                ..RetrievalConfig::default()
            };
            hybrid_retrieve(&a.prompt, &bank, &cfg, &EmbeddingProvider::from_spec(&spec)?)?
        }
        None => protoflow::retrieval::RetrievalResult::empty(proto_dim),
    };
    let input = generator.condition_input(&a.prompt, retrieved.features.as_array().clone())?;
    let cfg = SampleConfig {
        steps: a.steps,
        guidance_scale: a.guidance,
        seed: a.seed,
    };
    let z = generator.sample(&input, a.n, &cfg)?;
    codec::write_matrix(&a.out, &FeatureMatrix::from_array(z.clone())?)?;
    let m = z.mean_axis(Axis(0)).expect("n > 0");
    let s = z.std_axis(Axis(0), 0.0);
    let summary = format!(
        "prompt\t{}\nn\t{}\nsteps\t{}\nguidance_scale\t{}\nseed\t{}\nmean\t{}\nstd\t{}\nprototypes\t{:?}\n",
        a.prompt,
        a.n,
        a.steps,
        a.guidance,
        a.seed,
        m.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" "),
        s.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" "),
        retrieved.ids,
    );
    let path = a.out.with_extension("txt");
    fs::write(&path, &summary).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    print!("{summary}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { run, stages } => {
            let stages = if stages.is_empty() { Stage::DEFAULT_RUN.to_vec() } else { stages };
            run_stages(&run, &stages)
        }
        Command::Curate(a) => match a.config {
            Some(config) => run_stages(&RunArgs { config, seed: a.seed, out: a.out }, &[Stage::Curate]),
            None => {
                let plan = protoflow::toy::CurationPlan {
                    clusters: a.clusters,
                    refined_size: a.refined,
                    ..Default::default()
                };
                let lists = curate_inputs(a.images.as_deref(), a.features.as_deref(), &plan, a.seed.unwrap_or(0))?;
                lists.write(&a.out)?;
                println!(
                    "kept {} after dedup, {} after sharpness, {} refined -> {}",
                    lists.deduped.len(),
                    lists.sharp.len(),
                    lists.refined.len(),
                    a.out.display()
                );
                Ok(())
            }
        },
        Command::Bank(a) => match (a.config, a.captions) {
            (Some(config), _) => run_stages(&RunArgs { config, seed: a.seed, out: a.out }, &[Stage::Bank]),
            (None, Some(captions)) => {
                let text = a.text.expect("required by clap");
                let provider = a.feature_ids.map(|ids| ProviderSpec::FeatureFile {
                    matrix: text.clone(),
                    ids,
                });
                let files = BankFiles {
                    captions,
                    text,
                    vision: a.vision.expect("required by clap"),
                    proto: a.proto.expect("required by clap"),
                    allow: a.allow,
                    provider,
                };
                let m = bank_from_files(&files, &Default::default(), a.seed.unwrap_or(0), &a.out)?;
                println!("bank of {} prototypes (d_q {}, d_p {}) -> {}", m.m, m.d_q, m.d_p, a.out.display());
                Ok(())
            }
            (None, None) => Err(Error::Config("bank needs --config or --captions/--text/--vision/--proto".into())),
        },
        Command::Retrieve {
            bank,
            prompt,
            km,
            seed,
            features_out,
        } => {
            let bank = load_bank(&bank)?;
            let spec = bank
                .provider()
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("bank records no query encoder".into()))?;
            let cfg = RetrievalConfig {
                km,
                seed,
                ..RetrievalConfig::default()
            };
            let r = hybrid_retrieve(&prompt, &bank, &cfg, &EmbeddingProvider::from_spec(&spec)?)?;
            print!("{}", r.report());
            if let Some(path) = features_out {
                codec::write_matrix(&path, &r.features)?;
            }
            Ok(())
        }
        Command::Train { run, stage } => {
            let mut p = open_pipeline(&run)?;
            let m = p.train(stage)?;
            println!("train: {} artifacts in {} ms", m.artifacts.len(), m.elapsed_ms);
            println!("{}", p.run_dir().display());
            Ok(())
        }
        Command::Sample(a) => sample(a),
        Command::Eval(cmd) => eval(cmd),
        Command::Ablate(run) => run_stages(&run, &[Stage::Ablate]),
        Command::Verify { run_a, run_b } => match verify_repro(&run_a, &run_b)? {
            ReproOutcome::Equal { stages } => {
                let names: Vec<String> = stages.iter().map(Stage::to_string).collect();
                println!("equal ({})", names.join(", "));
                Ok(())
            }
            ReproOutcome::Diverged(d) => Err(Error::InvalidArgument(format!("runs diverge: {d}"))),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
