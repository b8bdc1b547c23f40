//! Fidelity, retrieval, probe and leakage metrics on synthetic features.
//!
//! cargo run --release --example metrics

use protoflow::eval::{
    alignment_score, fid, kid, leakage_check, linear_probe, retrieval_metrics, LabeledFeatures, MetricReport,
    ProbeSplit, RankedRetrieval, LEAKAGE_THRESHOLD,
};
use protoflow::linalg::FeatureMatrix;
use protoflow::rng::SeededRng;

fn gaussian(n: usize, d: usize, shift: f64, rng: &mut SeededRng) -> FeatureMatrix {
    FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.normal() + shift).collect()).expect("finite")
}

fn main() -> protoflow::Result<()> {
    let mut rng = SeededRng::new(0);
    let real = gaussian(500, 8, 0.0, &mut rng);
    let mut report = MetricReport::new();
    for shift in [0.0, 0.25, 1.0] {
        let fake = gaussian(500, 8, shift, &mut rng);
        report.set(format!("fid.shift{shift}"), fid(&real, &fake)?)?;
        report.set(format!("kid.shift{shift}"), kid(&real, &fake, 1)?)?;
    }

    // Paired queries: each query is a noisy copy of its gallery item.
    let gallery = gaussian(100, 16, 0.0, &mut rng);
    let noisy = |scale: f64, rng: &mut SeededRng| {
        let rows: Vec<Vec<f64>> = (0..gallery.rows())
            .map(|i| gallery.row(i).iter().map(|v| v + scale * rng.normal()).collect())
            .collect();
        FeatureMatrix::from_rows(&rows)
    };
    let queries = noisy(0.8, &mut rng)?;
    report.set("alignment", alignment_score(&queries, &gallery)?)?;
    for m in retrieval_metrics(&RankedRetrieval::paired(&queries, &gallery)?, &[1, 5, 10])? {
        report.set(format!("recall@{}", m.k), m.recall)?;
        report.set(format!("map@{}", m.k), m.map)?;
    }

    // Three separable classes for the linear probe.
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..300 {
        let c = i % 3;
        rows.push((0..6).map(|j| if j == c { 2.0 } else { 0.0 } + rng.normal()).collect::<Vec<f64>>());
        labels.push(c);
    }
    let data = LabeledFeatures::new(FeatureMatrix::from_rows(&rows)?, labels)?;
    let probe = linear_probe(&ProbeSplit::from_shuffled(&data, 2)?, 2)?;
    report.set("probe.weighted_f1", probe.weighted_f1)?;
    report.set("probe.weighted_auc", probe.weighted_auc)?;

    let leak = leakage_check(&real, &gallery_like(&real)?, LEAKAGE_THRESHOLD)?;
    report.set("leakage.max", leak.max)?;
    report.set_meta("leakage", leak.verdict());
    print!("{}", report.to_text());
    Ok(())
}

/// A copy of the first ten rows: every one of them is a leak.
fn gallery_like(x: &FeatureMatrix) -> protoflow::Result<FeatureMatrix> {
    x.gather(&(0..10).collect::<Vec<_>>())
}
