use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn gla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gla"))
        .args(args)
        .env_remove("GLA_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn gla")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path) -> Output {
    gla(&[
        "synth",
        "--n-empty",
        "4",
        "--n-person",
        "4",
        "--resolution",
        "32",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&gla(&[])), 1);
    assert_eq!(code(&gla(&["train"])), 1);
    assert_eq!(code(&gla(&["synth", "--out", "x", "--mode", "lidar"])), 1);
    assert_eq!(code(&gla(&["--help"])), 0);
}

#[test]
fn synth_is_byte_deterministic() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    assert_eq!(code(&synth(a.path())), 0);
    assert_eq!(code(&synth(b.path())), 0);
    let read = |d: &Path| fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let frames = fs::read_dir(a.path().join("frames")).unwrap().count();
    assert!(frames >= 8, "{frames} frame files");
}

#[test]
fn too_small_resolution_is_a_config_error() {
    let d = tempdir().unwrap();
    let out = gla(&["synth", "--resolution", "4", "--out", d.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let d = tempdir().unwrap();
    let out = gla(&[
        "train",
        "--manifest",
        d.path().join("nope.json").to_str().unwrap(),
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_field_is_rejected() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_epoch": 3}"#).unwrap();
    let out = gla(&[
        "train",
        "--manifest",
        "m.json",
        "--out",
        d.path().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_eval_explain_round_trip() {
    let d = tempdir().unwrap();
    let data = d.path().join("data");
    let run = d.path().join("run");
    assert_eq!(code(&synth(&data)), 0);
    let manifest = data.join("manifest.json");
    let out = gla(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--max-epochs",
        "0",
        "--patience",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "config.json", "history.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let ckpt = run.join("model.ckpt");
    let out = gla(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("eval_metrics.json")).unwrap()).unwrap();
    let acc = metrics["alignment_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let out = gla(&[
        "explain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--frame",
        "frame_00000",
        "--n-perturbations",
        "2",
        "--out",
        run.join("explain").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let figures: Vec<_> = fs::read_dir(run.join("explain/figures")).unwrap().collect();
    assert_eq!(figures.len(), 2, "one png and its metadata");

    let out = gla(&[
        "explain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--frame",
        "no_such_frame",
        "--out",
        run.join("explain2").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}
