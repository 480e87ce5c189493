use std::path::Path;
use std::process::{Command, Output};

fn tempokit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempokit"))
        .args(args)
        .current_dir(cwd)
        .env("TEMPOKIT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_evaluate_estimate_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = tempokit(&["synth", "--out-dir", "data", "--bpm", "80,100,120,140,160", "--duration", "12", "--activations"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 5 clips"));
    for f in ["manifest.json", "clip000.wav", "clip000.beats", "clip004.act"] {
        assert!(d.join("data").join(f).exists(), "{f} missing");
    }

    let o = tempokit(
        &["evaluate", "--manifest", "data/manifest.json", "--activations", "--all-clips", "--method", "acf-estimate", "--out", "r1.json"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("acf-estimate"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r1.json")).unwrap()).unwrap();
    assert_eq!(report["aggregates"]["acf-estimate"]["acc1_rate"], 1.0);
    assert_eq!(report["records"].as_array().unwrap().len(), 5);

    // Same inputs, same bytes.
    let o = tempokit(
        &["evaluate", "--manifest", "data/manifest.json", "--activations", "--all-clips", "--method", "acf-estimate", "--out", "r2.json"],
        d,
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("r1.json")).unwrap(), std::fs::read(d.join("r2.json")).unwrap());

    let o = tempokit(&["evaluate", "--manifest", "data/manifest.json", "--oracle", "--out", "r3.json"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    for name in ["direct", "acf-estimate", "dbn-estimate", "comb-estimate", "crf-infer", "dbn-infer", "comb-infer"] {
        assert!(table.contains(name), "{name} missing from\n{table}");
    }

    let o = tempokit(&["estimate", "data/clip002.wav", "--activation", "data/clip002.act", "--method", "dbn-infer"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!((est["bpm"].as_f64().unwrap() - 120.0).abs() < 120.0 * 0.04);
    assert_eq!(est["method"], "dbn-infer");
}

#[test]
fn train_then_estimate_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tempokit(&["synth", "--out-dir", "data", "--bpm", "90,120,150", "--duration", "6"], d).status.code(), Some(0));
    let o = tempokit(&["train", "--manifest", "data/manifest.json", "--out", "m.tcnw", "--epochs", "2", "--all-clips"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("training clips: 3, training examples: 3"), "{text}");
    assert!(text.contains("epoch    2"), "{text}");
    let history = std::fs::read_to_string(d.join("m.tcnw.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(history.lines().count(), 3);

    let o = tempokit(&["estimate", "data/clip000.wav", "--model", "m.tcnw"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(est["bpm"].as_f64().unwrap() > 0.0);
    assert_eq!(est["method"], "direct");

    let o = tempokit(&["features", "data/clip000.wav", "--out", "f.txt", "--fps", "50"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let info: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(info["bands"], 81);
    assert_eq!(info["frames"], 300);
    let dump = std::fs::read_to_string(d.join("f.txt")).unwrap();
    assert_eq!(dump.lines().count(), 301);

    // Flip one payload byte: the checksum must catch it.
    let mut bytes = std::fs::read(d.join("m.tcnw")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x80;
    std::fs::write(d.join("bad.tcnw"), bytes).unwrap();
    let o = tempokit(&["estimate", "data/clip000.wav", "--model", "bad.tcnw"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tempokit(&["--help"], d).status.code(), Some(0));
    assert_eq!(tempokit(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(tempokit(&["synth", "--out-dir", "x", "--bpm", "-5"], d).status.code(), Some(1));
    let o = tempokit(&["estimate", "nowhere.wav", "--model", "nowhere.tcnw"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
    let o = tempokit(&["evaluate", "--manifest", "nowhere.json", "--oracle"], d);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(tempokit(&["synth", "--out-dir", "data", "--bpm", "100,110", "--duration", "8"], d).status.code(), Some(0));
    let o = tempokit(&["evaluate", "--manifest", "data/manifest.json", "--oracle", "--method", "nope"], d);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(d.join("cfg.json"), r#"{"decoder": {"bpm_min": 300.0}}"#).unwrap();
    let o = tempokit(&["evaluate", "--manifest", "data/manifest.json", "--oracle", "--config", "cfg.json"], d);
    assert_eq!(o.status.code(), Some(1));

    // Only 44.1 kHz audio is accepted; other rates are data errors.
    let spec = hound::WavSpec { channels: 1, sample_rate: 48_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(d.join("hi.wav"), spec).unwrap();
    for _ in 0..48_000 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    std::fs::write(d.join("m.tcnw"), b"not a model").unwrap();
    let o = tempokit(&["features", "hi.wav", "--out", "f.txt"], d);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = tempokit(&["estimate", "data/clip000.wav", "--model", "m.tcnw"], d);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
