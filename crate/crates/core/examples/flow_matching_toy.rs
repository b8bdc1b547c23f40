//! Two-stage flow-matching training on a conditional two-Gaussian task, then
//! guided Euler sampling.
//!
//! cargo run --release --example flow_matching_toy

use protoflow::autograd::Mat;
use protoflow::flowmatch::{run_two_stage, FlowDataset, Generator, GeneratorConfig, SampleConfig, TrainConfig};
use protoflow::rng::SeededRng;
use protoflow::toy::CLASS_MEANS;

fn main() -> protoflow::Result<()> {
    let gen = Generator::new(GeneratorConfig::default())?;
    let d_p = gen.config().msc.proto_dim;
    let mut rng = SeededRng::new(3);
    let mut data = FlowDataset::default();
    for (c, prompt) in ["tumor region with nuclear atypia", "benign stroma with fibrosis"].iter().enumerate() {
        let sign = if c == 0 { 1.0 } else { -1.0 };
        let protos = Mat::from_shape_fn((4, d_p), |_| sign + 0.3 * rng.normal());
        data.conditions.push(gen.condition_input(prompt, protos)?);
    }
    for i in 0..2000 {
        let c = i % 2;
        let [x, y] = CLASS_MEANS[c];
        data.latents
            .push(Mat::from_shape_vec((1, 2), vec![x + 0.35 * rng.normal(), y + 0.35 * rng.normal()]).expect("1x2"));
        data.labels.push(c);
    }
    let fine = FlowDataset {
        conditions: data.conditions.clone(),
        latents: data.latents[..400].to_vec(),
        labels: data.labels[..400].to_vec(),
    };

    let stage1 = TrainConfig {
        steps: 800,
        batch: 128,
        peak_lr: 1e-3,
        min_lr: 1e-4,
        ..TrainConfig::stage1()
    };
    let stage2 = TrainConfig {
        steps: 100,
        batch: 128,
        fixed_lr: 1e-4,
        ..TrainConfig::stage2()
    };
    let (ckpt, report) = run_two_stage(gen, &data, &fine, &stage1, &stage2)?;
    let (h1, t1) = report.stage1.head_tail_means(50);
    let (_, t2) = report.stage2.head_tail_means(50);
    println!("stage 1 loss {h1:.3} -> {t1:.3}; stage 2 ends at {t2:.3}");

    for s in [1.0, 3.0] {
        for (c, cond) in data.conditions.iter().enumerate() {
            let cfg = SampleConfig {
                guidance_scale: s,
                seed: c as u64,
                ..SampleConfig::default()
            };
            let z = ckpt.generator.sample(cond, 512, &cfg)?;
            let m = z.mean_axis(ndarray::Axis(0)).expect("samples");
            let [x, y] = CLASS_MEANS[c];
            println!(
                "s = {s}: class {c} sample mean ({:.3}, {:.3}) vs ({x}, {y}), error {:.3}",
                m[0],
                m[1],
                ((m[0] - x).powi(2) + (m[1] - y).powi(2)).sqrt()
            );
        }
    }
    Ok(())
}
