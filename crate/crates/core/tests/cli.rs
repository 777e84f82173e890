use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skelact::engine::save_checkpoint;
use skelact::models::{build_model, ModelSpec, Variant};

fn skelact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelact"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    assert_eq!(
        code(out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic 2D container plus a tiny-model config writing into `dir/run`.
fn setup(dir: &Path, epochs: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("synth.skl");
    let out = skelact(&[
        "gen-synth",
        "--layout",
        "coco17",
        "--per-class",
        "6",
        "--frames",
        "24",
        "--out",
        p(&data),
    ]);
    assert_eq!(json(&out)["samples"], 24);
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            r#"output_dir = "{}"

[data]
container = "{}"

[model]
layout = "coco17"
block_channels = [16, 16, 32, 32]
temporal_strides = [1, 1, 2, 1]
num_classes = 4
in_channels = 2
persons = 1

[transform]
clip_len = 16

[train]
epochs = {epochs}
batch_size = 8
"#,
            p(&dir.join("run")),
            p(&data)
        ),
    )
    .unwrap();
    (data, cfg)
}

#[test]
fn profile_reports_default_network() {
    let v = json(&skelact(&["profile"]));
    let params = v["params"].as_f64().unwrap();
    let gflops = v["gflops"].as_f64().unwrap();
    assert!((params / 1.39e6 - 1.0).abs() < 0.05, "{v}");
    assert!((gflops / 2.80 - 1.0).abs() < 0.10, "{v}");
    assert_eq!(v["input"], serde_json::json!([1, 2, 3, 100, 25]));
    let st = json(&skelact(&["profile", "--variant", "stgcn"]));
    assert!(st["params"].as_f64().unwrap() > params);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&skelact(&["frobnicate"])), 1);
    assert_eq!(code(&skelact(&["fuse"])), 1);
    assert_eq!(code(&skelact(&["profile", "--frames", "many"])), 1);
    assert_eq!(code(&skelact(&["--help"])), 0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&skelact(&["train", "--config", p(&cfg)])), 2);
    assert_eq!(code(&skelact(&["profile", "--variant", "resnet"])), 2);
    assert_eq!(
        code(&skelact(&[
            "gen-synth",
            "--layout",
            "ntu26",
            "--out",
            p(&dir.path().join("x"))
        ])),
        2
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.skl");
    fs::write(&bogus, b"XXXXnot a container").unwrap();
    let out = skelact(&[
        "preprocess",
        "--input",
        p(&bogus),
        "--output",
        p(&dir.path().join("o.skl")),
        "--steps",
        "pad-zero:10",
    ]);
    assert_eq!(code(&out), 3);
    let missing = dir.path().join("missing.sks");
    assert_eq!(code(&skelact(&["fuse", "--scores", p(&missing)])), 3);

    // 2D data cannot be pre-normalized in 3D
    let (data, _) = setup(dir.path(), 0);
    let out = skelact(&[
        "preprocess",
        "--input",
        p(&data),
        "--output",
        p(&dir.path().join("o.skl")),
        "--steps",
        "pre-normalize",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn gradcheck_ops_pass() {
    let v = json(&skelact(&["gradcheck", "--ops-only", "--seeds", "2"]));
    assert!(v.as_array().unwrap().iter().all(|r| r["passed"] == true));
}

#[test]
fn zero_epoch_training_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = setup(dir.path(), 0);
    let v = json(&skelact(&["train", "--config", p(&cfg)]));
    assert_eq!(v["epochs"], 0);
    let ckpt = fs::read(v["checkpoint"].as_str().unwrap()).unwrap();

    let spec = ModelSpec::tiny(Variant::Stgcnpp, "coco17", 2, 1, 4);
    let model = build_model::<f32>(&spec, 0).unwrap();
    let reference = dir.path().join("init.skw");
    save_checkpoint(&model.params, &reference).unwrap();
    assert_eq!(ckpt, fs::read(&reference).unwrap());
    assert!(dir.path().join("run/config.resolved.toml").exists());
}

#[test]
fn train_eval_fuse_and_resolved_config_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = setup(dir.path(), 2);
    let run = dir.path().join("run");
    json(&skelact(&["train", "--config", p(&cfg)]));
    let log = fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let eval = json(&skelact(&["eval", "--config", p(&cfg)]));
    let scores = eval["scores"].as_str().unwrap().to_string();
    assert!(scores.ends_with("scores_joint.sks"));
    for w in ["1", "2.5"] {
        let fused = json(&skelact(&["fuse", "--scores", &scores, "--weights", w]));
        assert_eq!(fused["metrics"], eval["metrics"]);
    }
    let two = json(&skelact(&["fuse", "--scores", &scores, &scores]));
    assert_eq!(two["weights"], serde_json::json!([1.0, 1.0]));
    assert_eq!(two["metrics"], eval["metrics"]);

    // rerun from the persisted config into a second directory
    let resolved = fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    let again = dir.path().join("again");
    let cfg2 = dir.path().join("resolved.toml");
    fs::write(&cfg2, resolved.replace(p(&run), p(&again))).unwrap();
    json(&skelact(&["train", "--config", p(&cfg2)]));
    assert_eq!(
        fs::read(run.join("model.skw")).unwrap(),
        fs::read(again.join("model.skw")).unwrap()
    );
    assert_eq!(log, fs::read_to_string(again.join("log.jsonl")).unwrap());

    // flag overrides land in the resolved config
    let third = dir.path().join("third");
    json(&skelact(&[
        "train",
        "--config",
        p(&cfg),
        "--epochs",
        "1",
        "--lr",
        "0.02",
        "--output-dir",
        p(&third),
    ]));
    let r = fs::read_to_string(third.join("config.resolved.toml")).unwrap();
    assert!(
        r.contains("epochs = 1") && r.contains("base_lr = 0.02"),
        "{r}"
    );
    assert!(r.contains(p(&data)));
}

#[test]
fn preprocess_and_heatmap_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path(), 0);
    let padded = dir.path().join("padded.skl");
    let v = json(&skelact(&[
        "preprocess",
        "--input",
        p(&data),
        "--output",
        p(&padded),
        "--steps",
        "normalize-2d,pad-loop:40,stream:bone",
    ]));
    assert_eq!(v["samples"], 24);
    let back = skelact::skeleton::load_container(&padded).unwrap();
    assert_eq!(back.samples[0].shape.frames, 40);
    assert!(back.samples[0].image_size.is_none());

    let hmv = dir.path().join("s.hmv");
    let pgm = dir.path().join("s.pgm");
    let v = json(&skelact(&[
        "dump-heatmap",
        "--input",
        p(&data),
        "--output",
        p(&hmv),
        "--height",
        "32",
        "--width",
        "48",
        "--pgm",
        p(&pgm),
        "--pgm-joint",
        "9",
    ]));
    assert_eq!(v["shape"], serde_json::json!([17, 24, 32, 48]));
    let bytes = fs::read(&hmv).unwrap();
    assert_eq!(&bytes[..4], b"HMV1");
    assert_eq!(bytes.len(), 20 + 17 * 24 * 32 * 48 * 4);
    assert!(fs::read(&pgm).unwrap().starts_with(b"P5\n48 32\n255\n"));
}
