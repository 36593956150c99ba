use std::path::Path;
use std::process::{Command, Output};

use affectivenet::ami::load_ami1;
use affectivenet::io::write_png;

fn affnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affnet"))
        .args(args)
        .env("AFFNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, subjects: &str) {
    let out = dir.to_str().unwrap();
    let o = affnet(&["synth", "--out", out, "--subjects", subjects, "--clips", "4", "--size", "16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn params_reports_default_total() {
    let o = affnet(&["params", "--variant", "affectivenet"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("2271296") && text.contains("9085184"), "{text}");
    assert!(text.contains("2.27"));

    let o = affnet(&["params", "--variant", "all", "--json"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 7);
}

#[test]
fn exit_codes() {
    let o = affnet(&["params", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(affnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(affnet(&["train", "--input-size", "0", "--manifest", "m.csv", "--out", "x"]).status.code(), Some(1));
    assert_eq!(affnet(&["params", "--variant", "nonsense"]).status.code(), Some(2));
    let o = affnet(&["eval-loso", "--manifest", "/definitely/not/here.csv", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("here.csv"));
    assert_eq!(affnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn ami_of_single_frame_is_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip");
    let pixels: Vec<u8> = (0..4 * 5 * 3).map(|i| (i * 4) as u8).collect();
    write_png(&clip.join("f0.png"), 5, 4, 3, pixels.clone()).unwrap();
    let out = dir.path().join("clip.ami1");
    let o = affnet(&["ami", "--clip", clip.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ami = load_ami1::<f64>(&out).unwrap();
    assert_eq!(ami.shape(), &[4, 5, 3]);
    for (a, &p) in ami.data().iter().zip(&pixels) {
        assert!((a - p as f64 / 255.0).abs() < 1e-6);
    }
    assert!(dir.path().join("clip.png").is_file());
}

#[test]
fn loso_on_two_subjects_has_two_folds() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    let run = dir.path().join("run");
    let manifest = dir.path().join("manifest.csv");
    let o = affnet(&[
        "eval-loso",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--input-size",
        "16",
        "--depth-divisor",
        "8",
        "--epochs",
        "1",
        "--batch",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_fold_accuracy"].as_array().unwrap().len(), 2);
    assert_eq!(report["protocol"], "loso");
    for f in ["config.json", "confusion.csv", "loss.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let config: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["epochs"], 1);
    assert_eq!(config["network"]["input_size"], serde_json::json!([16, 16]));
}

#[test]
fn train_then_export_activations() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    let run = dir.path().join("run");
    let manifest = dir.path().join("manifest.csv");
    let o = affnet(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--input-size",
        "16x16",
        "--depth-divisor",
        "8",
        "--epochs",
        "2",
        "--batch",
        "4",
        "--augment",
        "--weight-rule",
        "literal",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "report.json", "confusion.csv", "model.afnw", "loss.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    let frame = std::fs::read_dir(dir.path().join("sub01/sub01_clip01")).unwrap().next().unwrap().unwrap().path();
    let maps = dir.path().join("maps");
    let o = affnet(&[
        "activations",
        "--model",
        run.join("model.afnw").to_str().unwrap(),
        "--input",
        frame.to_str().unwrap(),
        "--layers",
        "branch1.stem,fm3",
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // two stem channels and ceil(196 / 8) Fm3 channels
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 2 + 25);
}
