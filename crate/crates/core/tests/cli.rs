use std::path::Path;
use std::process::{Command, Output};

use cplearn::cli::data::Dataset;
use cplearn::cli::run::{CHECKPOINT_FILE, METRICS_FILE, METRICS_HEADER, REPORT_FILE};

fn cplearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cplearn"))
        .args(args)
        .env_remove("CPLEARN_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "f = 8\nc = 8\nbatch = 20\nepochs = 3\nhidden = 16\n\
                     clusters = 4\ndim = 8\nper_cluster = 25\n\
                     gmm_grid = 2\nmc_samples = 200\nprobe_epochs = 5\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn gen_data_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = cplearn(&["gen-data", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("label,x0,"));
    assert!(header.ends_with(",x15"));
    assert_eq!(lines.count(), 1000);
}

#[test]
fn gen_data_is_deterministic_and_zero_spread_repeats_means() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = cplearn(&["gen-data", "--spread", "0", "--per-cluster", "5", "--seed", "9", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = Dataset::load(&a).unwrap();
    for i in 0..ds.len() {
        for j in 0..ds.len() {
            if ds.labels[i] == ds.labels[j] {
                assert_eq!(ds.features.row(i), ds.features.row(j));
            }
        }
    }
}

#[test]
fn gen_data_unwritable_path() {
    let o = cplearn(&["gen-data", "--out", "/nonexistent/dir/d.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/dir/d.csv"));
}

#[test]
fn train_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = cplearn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [METRICS_FILE, REPORT_FILE, CHECKPOINT_FILE] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 3 * 4);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 3);
    assert!(report["seeds"]["train"].is_u64());
    assert!(report["seeds"]["data"].is_u64());
    assert!(report["seeds"]["dictionary"].is_u64());
}

#[test]
fn overrides_win_over_config_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let cfg = write_config(dir.path(), &format!("{SMALL}output_dir = {}\n", dir.path().join("from_cfg").display()));
    let o = Command::new(env!("CARGO_BIN_EXE_cplearn"))
        .args(["train", "--config", &cfg, "--epochs", "1"])
        .env("CPLEARN_OUTPUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let from_cfg = dir.path().join("from_cfg");
    assert!(from_cfg.join(REPORT_FILE).is_file());
    assert!(!env_out.exists());
    let metrics = std::fs::read_to_string(from_cfg.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);

    let o = Command::new(env!("CARGO_BIN_EXE_cplearn"))
        .args(["train", "--config", &write_config(dir.path(), SMALL), "--epochs=1"])
        .env("CPLEARN_OUTPUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join(REPORT_FILE).is_file());
}

#[test]
fn epsilon_above_one_over_c_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = cplearn(&["train", "--config", &cfg, "--c", "10", "--epsilon", "0.2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("epsilon") && !err.contains("unknown key"), "{err}");
}

#[test]
fn config_problems_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "batch = 1\nbeta = -1\nlr = 0\n");
    let o = cplearn(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["batch", "beta", "lr"] {
        assert!(err.contains(key), "{key} not reported in {err}");
    }
}

#[test]
fn malformed_config_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f = 8\nbeta = lots\n");
    let o = cplearn(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.cfg:2"), "{}", stderr(&o));
    let o = cplearn(&["train", "--bogus", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
    let o = cplearn(&["train", "--epochs"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cplearn(&["train", "--data", "/nonexistent/data.csv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/data.csv"));
}

#[test]
fn train_on_csv_then_diagnose_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = cplearn(&["gen-data", "--dim", "8", "--per-cluster", "25", "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let cfg = write_config(dir.path(), &format!("{SMALL}data = {}\n", data.display()));
    let out = dir.path().join("run");
    let o = cplearn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join(CHECKPOINT_FILE);

    let o = cplearn(&[
        "diagnose",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--gmm-grid",
        "2",
        "--mc-samples",
        "100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["singular_values"].as_array().unwrap().len(), 8);
    assert!(report["representation_rank"].as_u64().unwrap() <= 8);

    let o = cplearn(&["probe", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--epochs", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = cplearn(&["probe", "--checkpoint", bad.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_embedding_and_dictionary_pass() {
    for suite in ["embedding", "dictionary"] {
        let o = cplearn(&["verify", suite]);
        assert!(o.status.success(), "{suite}: {}", stdout(&o));
        let table = stdout(&o);
        assert!(table.contains("verdict"));
        assert!(!table.contains("FAIL"));
    }
}

#[test]
fn verify_exit_code_tracks_verdicts() {
    let o = cplearn(&["verify", "lemma1"]);
    let table = stdout(&o);
    assert!(table.contains("beta=10: share of seeds with an empty code"));
    let any_fail = table.lines().any(|l| l.trim_end().ends_with("FAIL"));
    assert_eq!(o.status.success(), !any_fail);
    assert_eq!(o.status.code(), Some(if any_fail { 1 } else { 0 }));
}

#[test]
fn verify_unknown_suite() {
    let o = cplearn(&["verify", "everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown suite"));
}
