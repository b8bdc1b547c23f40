//! Run-directory contracts of the staged pipeline, on the smoke config.

use std::fs;
use std::path::{Path, PathBuf};

use protoflow::pipeline::{
    run_pipeline, verify_repro, Divergence, Pipeline, ReproOutcome, RunConfig, RunManifest, Stage, TrainSelection,
    CONFIG_ECHO,
};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

#[test]
fn runs_reproduce_and_stages_rerun_in_isolation() {
    let out = tempfile::tempdir().unwrap();
    let (a, manifests) = run_pipeline(&smoke(), &out.path().join("a"), &Stage::DEFAULT_RUN, None).unwrap();
    let (b, _) = run_pipeline(&smoke(), &out.path().join("b"), &Stage::DEFAULT_RUN, None).unwrap();
    assert_eq!(manifests.len(), 5);
    assert!(a.join(CONFIG_ECHO).is_file());
    assert_eq!(
        verify_repro(&a, &b).unwrap(),
        ReproOutcome::Equal {
            stages: Stage::DEFAULT_RUN.to_vec()
        }
    );

    // Deleting one stage and rerunning it alone restores identical outputs.
    let sample_before = RunManifest::read(&a.join("sample")).unwrap();
    fs::remove_dir_all(a.join("sample")).unwrap();
    let mut p = Pipeline::create(RunConfig::load(&smoke()).unwrap(), &out.path().join("a")).unwrap();
    assert_eq!(p.run_dir(), a);
    let sample_after = p.run_stage(Stage::Sample).unwrap();
    assert_eq!(sample_before.artifacts, sample_after.artifacts);

    // Training the stages separately gives the combined checkpoint.
    let train_before = RunManifest::read(&a.join("train")).unwrap();
    p.train(TrainSelection::One).unwrap();
    let split = p.train(TrainSelection::Two).unwrap();
    assert_eq!(train_before.artifacts, split.artifacts);

    // A tampered artifact is named.
    let report = b.join("eval").join("report.txt");
    let mut text = fs::read_to_string(&report).unwrap();
    text.push('\n');
    fs::write(&report, text).unwrap();
    match verify_repro(&a, &b).unwrap() {
        ReproOutcome::Diverged(Divergence::File { stage, file, .. }) => {
            assert_eq!(stage, Stage::Eval);
            assert_eq!(file, "report.txt");
        }
        other => panic!("expected a file divergence, got {other:?}"),
    }
}

#[test]
fn seeds_diverge_at_the_first_seeded_stage() {
    let out = tempfile::tempdir().unwrap();
    let stages = [Stage::Curate, Stage::Bank];
    let (a, _) = run_pipeline(&smoke(), out.path(), &stages, None).unwrap();
    let (b, _) = run_pipeline(&smoke(), out.path(), &stages, Some(1)).unwrap();
    assert_ne!(a, b);
    assert!(b.to_string_lossy().ends_with("-s1"));
    match verify_repro(&a, &b).unwrap() {
        ReproOutcome::Diverged(d) => assert!(matches!(d, Divergence::File { stage: Stage::Curate, .. }), "{d}"),
        other => panic!("seeds 0 and 1 agreed: {other:?}"),
    }
}

#[test]
fn config_and_dependency_errors_have_distinct_codes() {
    let e = RunConfig::from_toml_str("[train.stage1]\nlearning_rate = 1e-3\n").unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("train.stage1.learning_rate"), "{e}");

    let out = tempfile::tempdir().unwrap();
    let mut p = Pipeline::create(RunConfig::load(&smoke()).unwrap(), out.path()).unwrap();
    let e = p.run(&[Stage::Sample]).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(!p.stage_dir(Stage::Sample).exists());
}
