use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gazeattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazeattn")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, per_class: &str) {
    let o = gazeattn(&["synth-data", "--out", s(dir), "--per-class", per_class, "--gaze-per-subject", "6", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_manifest_exits_with_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gazeattn(&["train-gaze", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("paths.manifest"), "{}", stderr(&o));

    let o = gazeattn(&["train-gaze", "--out", s(dir.path()), "--manifest", "/no/such/file.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("paths.manifest"));
}

#[test]
fn unknown_command_and_unknown_key_are_rejected() {
    assert_eq!(gazeattn(&["fly"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"attention_train": {"epochs": 3}}"#).unwrap();
    let o = gazeattn(&["loso", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("attention_train.epochs"), "{}", stderr(&o));
}

#[test]
fn broken_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "1");
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"GZATCKPT\x01\x00\x00\x00garbage").unwrap();
    let o = gazeattn(&[
        "transfer-train",
        "--manifest",
        s(&data.join("attention.jsonl")),
        "--gaze-checkpoint",
        s(&ckpt),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"gaze_train": {"learning_rate": 0.005}, "synth": {"subjects": 2, "per_class": 1}}"#).unwrap();
    let out = dir.path().join("out");
    let o = gazeattn(&["synth-data", "--config", s(&cfg), "--out", s(&out), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: serde_json::Value = serde_json::from_slice(&fs::read(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["gaze_train"]["learning_rate"], 0.005);
    assert_eq!(resolved["attention_train"]["learning_rate"], 0.01);
    assert_eq!(resolved["seed"], 5);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = gazeattn(&["synth-data", "--out", s(&a), "--subjects", "3", "--per-class", "2", "--seed", "8"]);
    assert!(o.status.success());
    let mut cfg: serde_json::Value = serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    let b = dir.path().join("b");
    cfg["out"] = serde_json::Value::String(s(&b).into());
    let cfg_path = dir.path().join("again.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = gazeattn(&["synth-data", "--config", s(&cfg_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["gaze.jsonl", "attention.jsonl", "images/s01_table_0001.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn loso_writes_one_checkpoint_per_subject_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "4");
    let manifest = data.join("attention.jsonl");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = gazeattn(&[
            "loso", "--manifest", s(&manifest), "--backbone", "tiny", "--input-side", "32", "--seed", "0",
            "--max-epochs", "2", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("loso1");
    let b = run("loso2");
    for i in 1..=8 {
        assert!(a.join("checkpoints").join(format!("Model{i}.ckpt")).is_file());
        assert!(a.join(format!("confusion_Model{i}.png")).is_file());
    }
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 + 1);
    assert_eq!(csv, fs::read_to_string(b.join("report.csv")).unwrap());
    assert_eq!(fs::read(a.join("report.txt")).unwrap(), fs::read(b.join("report.txt")).unwrap());

    let again = dir.path().join("rerender");
    let o = gazeattn(&["report", "--report", s(&a.join("report.json")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("report.txt")).unwrap(), fs::read(again.join("report.txt")).unwrap());
}

#[test]
fn gaze_transfer_eval_and_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2");
    let gaze_out = dir.path().join("gaze");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"gaze_train": {"learning_rate": 0.005}}"#).unwrap();
    let o = gazeattn(&[
        "train-gaze", "--config", s(&cfg), "--lr", "0.002", "--manifest", s(&data.join("gaze.jsonl")), "--backbone", "tiny", "--input-side", "32",
        "--max-epochs", "2", "--val-subjects", "s07", "--out", s(&gaze_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(gaze_out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["gaze_train"]["learning_rate"], 0.002);
    let gaze_ckpt = gaze_out.join("gaze.ckpt");

    let attn_out = dir.path().join("attn");
    let o = gazeattn(&[
        "transfer-train", "--manifest", s(&data.join("attention.jsonl")), "--gaze-checkpoint", s(&gaze_ckpt),
        "--max-epochs", "2", "--out", s(&attn_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = attn_out.join("attention.ckpt");

    let eval_out = dir.path().join("eval");
    let o = gazeattn(&[
        "eval-assembly", "--manifest", s(&data.join("attention.jsonl")), "--model", s(&model), "--model", s(&model),
        "--out", s(&eval_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(eval_out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);

    // Frame stream: every synthetic image as one frame, plus a blank frame.
    let frames = dir.path().join("frames");
    fs::create_dir_all(&frames).unwrap();
    let mut names: Vec<_> = fs::read_dir(data.join("images")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for (i, p) in names.iter().take(12).enumerate() {
        fs::copy(p, frames.join(format!("frame_{i}.png"))).unwrap();
    }
    let blank = gazeattn::vision::ImageTensor::filled(64, 64, [20, 20, 20]).unwrap();
    blank.save_png(&frames.join("frame_12.png")).unwrap();
    let infer_out = dir.path().join("infer");
    let o = gazeattn(&[
        "infer", "--video", s(&frames), "--model", s(&model), "--fps", "2", "--dwell", "1", "--out", s(&infer_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let events = fs::read_to_string(infer_out.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 13);
    assert!(events.lines().last().unwrap().contains("\"class\":null"));

    let replay_out = dir.path().join("replay");
    let o = gazeattn(&[
        "infer", "--events", s(&infer_out.join("events.jsonl")), "--fps", "2", "--dwell", "1", "--out", s(&replay_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(infer_out.join("commands.jsonl")).unwrap(),
        fs::read(replay_out.join("commands.jsonl")).unwrap()
    );
}
