//! End-to-end checks of the camil binary: artifacts on disk, exit codes,
//! and the config > env > flag seed precedence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn camil() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_camil"));
    cmd.env_remove("CAMIL_SEED");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
    "slides": 40, "grid-size": 8, "d": 8, "hdim": 8,
    "landmarks": 8, "epochs": 2, "folds": 2
}"#;

const TINY: &str = r#"{
    "slides": 10, "grid-size": 6, "d": 6, "hdim": 8,
    "landmarks": 4, "epochs": 1, "folds": 2, "tumor-fraction": 0.15
}"#;

fn json_file(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn synth_writes_bags_manifest_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("data");
    let out = run(camil().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let manifest = json_file(&out_dir.join("manifest.json"));
    let slides = manifest["slides"].as_array().unwrap();
    assert_eq!(slides.len(), 10);
    for entry in slides {
        let bag = out_dir.join(entry["path"].as_str().unwrap());
        assert!(bag.exists(), "missing {}", bag.display());
        let label = entry["label"].as_u64().unwrap();
        assert!(label <= 1);
    }
    let echoed = json_file(&out_dir.join("config.json"));
    assert_eq!(echoed["slides"], 10);
    assert_eq!(echoed["grid-size"], 6);
}

#[test]
fn synth_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(camil().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(&out_dir));
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    let manifest_a = fs::read(dir.path().join("a/manifest.json")).unwrap();
    let manifest_b = fs::read(dir.path().join("b/manifest.json")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    let bag_a = fs::read(dir.path().join("a/bag-0003.bin")).unwrap();
    let bag_b = fs::read(dir.path().join("b/bag-0003.bin")).unwrap();
    assert_eq!(bag_a, bag_b);
}

#[test]
fn out_of_range_tumor_fraction_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "tumor-fraction": 1.5 }"#);
    let out = run(camil()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x")));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tumor-fraction"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_2_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "grid-sizes": 8 }"#);
    let out = run(camil()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x")));
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("grid-sizes"), "stderr: {err}");
}

#[test]
fn gradcheck_reports_every_variant_and_group() {
    let out = run(camil().arg("gradcheck"));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for variant in ["camil ", "camil-l", "camil-g", "mean", "max"] {
        assert!(text.contains(variant), "missing variant {variant:?}");
    }
    for group in ["wq1", "wk1", "wv1", "wq", "wk", "wv", "u_g", "v_g", "w_g", "wc"] {
        assert!(text.contains(group), "missing group {group:?}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn corrupted_gradient_hook_exits_3() {
    let out = run(camil().args(["gradcheck", "--corrupt-gradient"]));
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn untrained_eval_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("eval");
    let out = run(camil().args(["eval", "--config"]).arg(&cfg).arg("--out").arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let metrics = json_file(&out_dir.join("eval.json"));
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.3..=0.7).contains(&auc), "untrained auc {auc}");
}

#[test]
fn ablate_emits_five_rows_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("abl");
    let out = run(camil().args(["ablate", "--config"]).arg(&cfg).arg("--out").arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let text = stdout(&out);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| {
            ["camil ", "camil-l", "camil-g", "mean", "max"]
                .iter()
                .any(|v| l.starts_with(v))
        })
        .collect();
    assert_eq!(rows.len(), 5, "table:\n{text}");

    let table = json_file(&out_dir.join("ablate.json"));
    let entries = table.as_array().unwrap();
    assert_eq!(entries.len(), 5);
    let names: Vec<&str> = entries
        .iter()
        .map(|e| e["variant"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["camil", "camil-l", "camil-g", "mean", "max"]);
    for entry in entries {
        for metric in ["acc", "auc", "f1", "dice", "specificity"] {
            assert!(
                entry["mean"][metric].is_number() || entry["mean"][metric].is_null(),
                "{metric} missing"
            );
        }
    }
}

#[test]
fn heatmap_renders_requested_count_as_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("heat");
    let out = run(camil()
        .args(["heatmap", "--count", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    for i in 0..2 {
        let bytes = fs::read(out_dir.join(format!("heat-{i:04}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n"), "not a binary PGM");
    }
    assert!(!out_dir.join("heat-0002.pgm").exists());
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{ "slides": 3, "grid-size": 6, "tumor-fraction": 0.15, "seed": 41 }"#,
    );

    let from_config = dir.path().join("c");
    let out = run(camil().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(&from_config));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_file(&from_config.join("config.json"))["seed"], 41);

    let from_env = dir.path().join("e");
    let out = run(camil()
        .env("CAMIL_SEED", "77")
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&from_env));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_file(&from_env.join("config.json"))["seed"], 77);

    let from_flag = dir.path().join("f");
    let out = run(camil()
        .env("CAMIL_SEED", "77")
        .args(["synth", "--seed", "123", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&from_flag));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_file(&from_flag.join("config.json"))["seed"], 123);
}

#[test]
fn malformed_seed_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(camil()
        .env("CAMIL_SEED", "notanumber")
        .args(["synth", "--out"])
        .arg(dir.path().join("x")));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CAMIL_SEED"));
}

#[test]
fn train_writes_report_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let data_dir = dir.path().join("data");
    let out = run(camil().args(["synth", "--config"]).arg(&cfg).arg("--out").arg(&data_dir));
    assert_eq!(out.status.code(), Some(0));

    let run_dir = dir.path().join("run");
    let out = run(camil()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data_dir)
        .arg("--out")
        .arg(&run_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let report = json_file(&run_dir.join("report.json"));
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
    assert!(report["mean"]["auc"].is_number());
    assert!(run_dir.join("model.bin").exists());
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
    assert!(history.lines().count() >= 2);
}

#[test]
fn variant_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("v");
    let out = run(camil()
        .args(["eval", "--variant", "mean", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert_eq!(json_file(&out_dir.join("config.json"))["variant"], "mean");
}
