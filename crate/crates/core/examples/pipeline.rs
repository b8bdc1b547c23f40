//! The staged pipeline end to end on the smoke config, followed by a
//! reproducibility check against a second run.
//!
//! cargo run --release --example pipeline [-- path/to/config.toml]

use std::path::PathBuf;

use protoflow::pipeline::{run_pipeline, verify_repro, Stage};

fn main() -> protoflow::Result<()> {
    let config = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml"));
    let out = tempfile::tempdir().expect("temp dir");

    let (run_a, manifests) = run_pipeline(&config, &out.path().join("a"), &Stage::DEFAULT_RUN, None)?;
    for m in &manifests {
        println!("{:>7}: {:3} artifacts, {} ms", m.stage.to_string(), m.artifacts.len(), m.elapsed_ms);
    }
    let report = std::fs::read_to_string(run_a.join("eval").join("report.txt")).expect("eval report");
    for line in report.lines().filter(|l| l.starts_with("alignment") || l.starts_with("fid") || l.starts_with("mean_error.max")) {
        println!("  {line}");
    }

    let (run_b, _) = run_pipeline(&config, &out.path().join("b"), &Stage::DEFAULT_RUN, None)?;
    println!("second run: {:?}", verify_repro(&run_a, &run_b)?);
    Ok(())
}
