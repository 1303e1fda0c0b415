use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gsgn::cli::RunManifest;

fn gsgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsgn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = gsgn(args);
    assert!(
        out.status.success(),
        "gsgn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Trains a deliberately tiny model on synthetic data.
fn tiny_model(dir: &Path) -> String {
    let model = s(&dir.join("m.gsgn"));
    ok(&[
        "train", "--synth", "classes=3", "per-class=10", "--side", "16", "--epochs", "1", "--hidden", "8",
        "--out", &model,
    ]);
    model
}

#[test]
fn help_documents_defaults() {
    let out = ok(&["train", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["[default: 0.001]", "[default: 32]", "[default: 10]", "[default: 42]", "[default: 0.8]", "[default: 256]"] {
        assert!(text.contains(needle), "train --help lacks {needle}");
    }
    let text = String::from_utf8_lossy(&ok(&["evaluate", "--help"]).stdout).into_owned();
    for needle in ["[default: fgsm]", "[default: 0.02]", "[default: true]", "0,0.1,0.2,0.3,0.4,0.5,0.6", "0,0.05,0.1,0.15,0.2,0.3"] {
        assert!(text.contains(needle), "evaluate --help lacks {needle}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(gsgn(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(gsgn(&["evaluate", "--model", "m", "--attack", "cw"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = gsgn(&["train", "--synth", "colour=3", "--out", &s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn sweep_without_zero_is_rejected_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let csv = dir.path().join("r.csv");
    let out = gsgn(&["evaluate", "--model", &model, "--synth", "classes=3", "per-class=10", "--eps", "0.1,0.2", "--out", &s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must contain 0"));
    assert!(!csv.exists());
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nope.gsgn"));
    let out = gsgn(&["evaluate", "--model", &missing, "--synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.gsgn"));

    let model = tiny_model(dir.path());
    let zeros = "0".repeat(64);
    let out = gsgn(&["evaluate", "--model", &model, "--model-digest", &zeros, "--synth", "classes=3", "per-class=10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn class_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let out = gsgn(&["evaluate", "--model", &model, "--synth", "classes=4", "per-class=10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn training_from_written_synth_data_matches_in_memory_synth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth-data", "--classes", "3", "--per-class", "10", "--side", "16", "--seed", "5", "--out", &s(&data)]);
    let names: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    };
    assert_eq!(names, ["00_octagon", "01_triangle", "02_diamond"]);
    assert!(data.join("02_diamond/img_0009.ppm").exists());

    let common = ["--side", "16", "--epochs", "1", "--hidden", "8", "--seed", "5"];
    let a = s(&dir.path().join("a.gsgn"));
    let b = s(&dir.path().join("b.gsgn"));
    ok(&[&["train", "--data", &s(&data), "--out", &a][..], &common].concat());
    ok(&[&["train", "--synth", "classes=3", "per-class=10", "--out", &b][..], &common].concat());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn every_command_writes_a_replayable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = tiny_model(d);
    let src = ["--synth", "classes=3", "per-class=10"];
    ok(&[&["evaluate", "--model", &model][..], &src, &["--attack", "pgd", "--steps", "2", "--eps", "0,0.1", "--out", &s(&d.join("r.csv"))]].concat());
    ok(&[&["attack", "--model", &model][..], &src, &["--index", "2", "--out-adv", &s(&d.join("adv.ppm")), "--out-perturbation", &s(&d.join("p.ppm"))]].concat());
    ok(&[&["visualize", "--model", &model][..], &src, &["--eps", "0,0.2", "--out", &s(&d.join("g.ppm"))]].concat());
    ok(&["synth-data", "--classes", "2", "--per-class", "2", "--out", &s(&d.join("ds"))]);

    for manifest in ["m.gsgn.manifest", "r.csv.manifest", "adv.ppm.manifest", "g.ppm.manifest", "ds.manifest"] {
        let path = d.join(manifest);
        let m = RunManifest::read(&path).unwrap();
        assert!(!m.outputs().is_empty(), "{manifest} lists no outputs");
        let again = d.join("again");
        ok(&["replay", &s(&path), "--output-dir", &s(&again)]);
        for (name, recorded, _) in m.outputs() {
            let fresh = again.join(recorded.file_name().unwrap());
            if recorded.is_file() {
                assert_eq!(fs::read(&recorded).unwrap(), fs::read(&fresh).unwrap(), "{manifest}: {name}");
            }
        }
    }
}

#[test]
fn replay_detects_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let path = dir.path().join("m.gsgn.manifest");
    let mut m = RunManifest::read(&path).unwrap();
    assert_eq!(m.get("checkpoint_digest"), m.get("output.checkpoint.sha256"));
    m.set("output.checkpoint.sha256", "0".repeat(64));
    let tampered = dir.path().join("tampered.manifest");
    m.write(&tampered).unwrap();
    let out = gsgn(&["replay", &s(&tampered), "--output-dir", &s(&dir.path().join("again"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(Path::new(&model).exists());
}

#[test]
fn attack_on_an_image_file_defaults_to_the_predicted_label() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let data = dir.path().join("data");
    ok(&["synth-data", "--classes", "3", "--per-class", "1", "--side", "24", "--out", &s(&data)]);
    let image = s(&data.join("01_triangle/img_0000.ppm"));
    let adv = dir.path().join("adv.ppm");
    ok(&["attack", "--model", &model, "--image", &image, "--eps", "0", "--out-adv", &s(&adv), "--out-perturbation", &s(&dir.path().join("p.ppm"))]);
    let m = RunManifest::read(&dir.path().join("adv.ppm.manifest")).unwrap();
    assert_eq!(m.get("arg.label"), m.get("result.predicted_label"));
    let img = gsgn::data::decode_ppm(&fs::read(&adv).unwrap()).unwrap();
    assert_eq!((img.height(), img.width()), (16, 16));
}
