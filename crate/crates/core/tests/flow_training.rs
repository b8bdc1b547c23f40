//! Training behaviour of the generator on a small conditional two-Gaussian task.

use protoflow::autograd::Mat;
use protoflow::flowmatch::{
    load_checkpoint, run_single_stage, run_two_stage, save_checkpoint, FlowDataset, Generator, GeneratorConfig,
    ModelConfig, SampleConfig, TrainConfig,
};
use protoflow::msc::MscConfig;
use protoflow::rng::SeededRng;
use protoflow::toy::CLASS_MEANS;

fn small_generator() -> Generator {
    Generator::new(GeneratorConfig {
        msc: MscConfig {
            d_c: 16,
            n_queries: 4,
            proto_dim: 4,
            hidden: 16,
            ..MscConfig::default()
        },
        model: ModelConfig {
            d_model: 16,
            ..ModelConfig::default()
        },
        init_seed: 9,
    })
    .unwrap()
}

/// Component `c` is selected by condition `c`.
fn two_gaussians(gen: &Generator, n: usize, seed: u64) -> FlowDataset {
    let mut rng = SeededRng::new(seed);
    let mut data = FlowDataset::default();
    for (c, prompt) in ["tumor region with atypia", "benign stroma"].iter().enumerate() {
        let protos = Mat::from_shape_fn((3, 4), |(r, _)| if c == 0 { 1.0 + r as f64 } else { -1.0 - r as f64 });
        data.conditions.push(gen.condition_input(prompt, protos).unwrap());
    }
    for i in 0..n {
        let c = i % 2;
        let [x, y] = CLASS_MEANS[c];
        data.latents
            .push(Mat::from_shape_vec((1, 2), vec![x + 0.35 * rng.normal(), y + 0.35 * rng.normal()]).unwrap());
        data.labels.push(c);
    }
    data
}

fn stage1(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 64,
        peak_lr: 1e-3,
        min_lr: 1e-4,
        seed: 1,
        ..TrainConfig::stage1()
    }
}

#[test]
fn stage1_loss_falls_below_half() {
    let mut gen = small_generator();
    let data = two_gaussians(&gen, 256, 2);
    let report = run_single_stage(&mut gen, &data, &stage1(300)).unwrap();
    let (head, tail) = report.head_tail_means(20);
    assert!(tail < 0.5 * head, "loss {head:.4} -> {tail:.4}");

    let mut again = small_generator();
    let repeat = run_single_stage(&mut again, &data, &stage1(300)).unwrap();
    assert_eq!(report.losses, repeat.losses);
}

#[test]
fn guidance_changes_samples_without_dropout() {
    let mut gen = small_generator();
    let data = two_gaussians(&gen, 128, 3);
    let cfg = TrainConfig {
        uncond_drop_prob: 0.0,
        ..stage1(100)
    };
    run_single_stage(&mut gen, &data, &cfg).unwrap();
    let draw = |s: f64| {
        gen.sample(
            &data.conditions[0],
            64,
            &SampleConfig {
                steps: 10,
                guidance_scale: s,
                seed: 5,
            },
        )
        .unwrap()
    };
    let (one, three) = (draw(1.0), draw(3.0));
    let gap = one.iter().zip(three.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 1e-3, "s = 3 and s = 1 agree to {gap:e}");
}

#[test]
fn two_stage_checkpoint_round_trip() {
    let gen = small_generator();
    let large = two_gaussians(&gen, 128, 4);
    let small = two_gaussians(&gen, 32, 5);
    let s2 = TrainConfig {
        steps: 10,
        batch: 32,
        fixed_lr: 1e-4,
        ..TrainConfig::stage2()
    };
    let (ckpt, report) = run_two_stage(gen, &large, &small, &stage1(40), &s2).unwrap();
    assert_eq!((report.stage1.losses.len(), report.stage2.losses.len()), (40, 10));
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_checkpoint(&ckpt, dir.path()).unwrap();
    assert_eq!(manifest.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), vec![1, 2]);
    let back = load_checkpoint(dir.path()).unwrap();
    let cfg = SampleConfig {
        steps: 6,
        ..SampleConfig::default()
    };
    let a = ckpt.generator.sample(&large.conditions[1], 8, &cfg).unwrap();
    let b = back.generator.sample(&large.conditions[1], 8, &cfg).unwrap();
    assert_eq!(a, b);
}
