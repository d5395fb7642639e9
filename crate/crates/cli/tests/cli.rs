//! End-to-end checks through the built binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn vdsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdsim"))
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let out = vdsim()
        .args(["config", "--print-defaults"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let defaults = String::from_utf8(out.stdout).unwrap();
    let small = defaults.replace("periods = 600", "periods = 400");
    let path = dir.join("exp.toml");
    fs::write(&path, small).unwrap();
    path
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn defaults_are_parseable_config() {
    let out = vdsim()
        .args(["config", "--print-defaults"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[schedule]"));
    assert!(text.contains("strategy = \"dmpg\""));
    // The printed defaults feed straight back in.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, &text).unwrap();
    let check = vdsim()
        .args(["validate-schedule", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(check.status.success());
    assert!(String::from_utf8(check.stdout)
        .unwrap()
        .contains("schedule ok"));
}

#[test]
fn validate_schedule_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_small_config(dir.path());
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("t_dc_gap = 80000", "t_dc_gap = 300000");
    fs::write(&path, text).unwrap();
    let out = vdsim()
        .args(["validate-schedule", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("t_cp_min"), "{report}");
}

#[test]
fn invalid_config_exits_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(&path, "[experiment]\nbogus_key = 1\n").unwrap();
    let out = vdsim()
        .args(["validate-schedule", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bogus_key"), "{err}");
}

#[test]
fn sweep_train_eval_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    // Two sweep runs from the same config are byte-identical.
    for out in [&out_a, &out_b] {
        let status = vdsim()
            .args([
                "sweep",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let features_a = fs::read(out_a.join("headway_3/features_seed1.csv")).unwrap();
    let features_b = fs::read(out_b.join("headway_3/features_seed1.csv")).unwrap();
    assert_eq!(
        features_a, features_b,
        "rerun must reproduce identical bytes"
    );
    assert_eq!(
        fs::read(out_a.join("summary.csv")).unwrap(),
        fs::read(out_b.join("summary.csv")).unwrap()
    );
    let manifest = fs::read_to_string(out_a.join("headway_3/manifest.toml")).unwrap();
    assert!(manifest.contains("axis = \"headway\""));
    let first_line = String::from_utf8(features_a.clone())
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(first_line.starts_with("# manifest: "));

    // Train a detector and a four-class model on the produced features.
    let features = out_a.join("headway_3/features_seed1.csv");
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.txt");
    let out = vdsim()
        .args([
            "train",
            "--data",
            features.to_str().unwrap(),
            "--classes",
            "binary",
            "--model-out",
            model.to_str().unwrap(),
            "--report-out",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(model.exists());
    let report_text = fs::read_to_string(&report).unwrap();
    assert!(report_text.contains("mean accuracy"), "{report_text}");

    // Evaluate the model on the same file.
    let out = vdsim()
        .args([
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--data",
            features.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout).unwrap().contains("overall"));

    // Replay the trace against its ground truth: identical feature rows.
    let trace = out_a.join("headway_3/trace_seed1_mp0.csv");
    let gt = out_a.join("headway_3/ground_truth_seed1_mp0.csv");
    let replayed = dir.path().join("replayed.csv");
    let out = vdsim()
        .args([
            "replay",
            "--trace",
            trace.to_str().unwrap(),
            "--ground-truth",
            gt.to_str().unwrap(),
            "--out",
            replayed.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let original = strip_comments(&String::from_utf8(features_a).unwrap());
    let rebuilt = strip_comments(&fs::read_to_string(&replayed).unwrap());
    assert_eq!(
        original, rebuilt,
        "replay must reproduce the simulated features"
    );

    // Per-instance granularity: one feature row per trace row.
    let per_instance = dir.path().join("per_instance.csv");
    let out = vdsim()
        .args([
            "replay",
            "--trace",
            trace.to_str().unwrap(),
            "--ground-truth",
            gt.to_str().unwrap(),
            "--out",
            per_instance.to_str().unwrap(),
            "--granularity",
            "instance",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace_rows = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1;
    let feature_rows = strip_comments(&fs::read_to_string(&per_instance).unwrap())
        .lines()
        .count()
        - 1;
    assert_eq!(feature_rows, trace_rows);
}

#[test]
fn eval_rejects_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(
        &empty,
        "tc,lt_us,rxct,ro_us,r,rssi_avg_dbm,rssi_sd_db,lqi_avg,lqi_sd,hc,t_start_us,period,label\n",
    )
    .unwrap();
    // A model file is needed first; train one from a tiny synthetic sweep.
    let config = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(vdsim()
        .args([
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap()
        ])
        .status()
        .unwrap()
        .success());
    let model = dir.path().join("m.json");
    assert!(vdsim()
        .args([
            "train",
            "--data",
            out_dir
                .join("headway_3/features_seed1.csv")
                .to_str()
                .unwrap(),
            "--classes",
            "binary",
            "--model-out",
            model.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let out = vdsim()
        .args([
            "eval",
            "--model",
            model.to_str().unwrap(),
            "--data",
            empty.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("empty test set"));
}

#[test]
fn strategy_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(vdsim()
        .args([
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--strategy",
            "pg",
        ])
        .status()
        .unwrap()
        .success());
    let manifest = fs::read_to_string(out_dir.join("headway_3/manifest.toml")).unwrap();
    assert!(manifest.contains("strategy = \"pg\""), "{manifest}");
}
