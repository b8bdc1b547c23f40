//! The `protoflow` binary: exit codes and the run / verify round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn protoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoflow")).args(args).output().unwrap()
}

fn last_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).lines().last().unwrap_or_default().to_string()
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = protoflow(&["run", "--config", cfg, "--out", out_dir.to_str().unwrap(), "--stages", "curate,bank"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(last_line(&out));
    }
    let ok = protoflow(&["verify", &runs[0], &runs[1]]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("equal (curate, bank)"));

    fs::write(Path::new(&runs[1]).join("bank").join("captions.txt"), "tampered\n").unwrap();
    let bad = protoflow(&["verify", &runs[0], &runs[1]]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bank"));

    let out = protoflow(&["retrieve", "--bank", &format!("{}/bank", runs[0]), "--prompt", "tumor region with atypia"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).lines().count() <= 16);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[retrieval]\nkm = 16\ntop_k = 3\n").unwrap();
    let out = protoflow(&["run", "--config", bad_cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrieval.top_k"));

    let out = protoflow(&[
        "run",
        "--config",
        smoke().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--stages",
        "eval",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = protoflow(&["train", "--config", smoke().to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--stage", "2"]);
    assert_eq!(out.status.code(), Some(3));
}
