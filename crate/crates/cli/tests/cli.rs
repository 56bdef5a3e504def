use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnsim::covariance::CovarianceSet;
use pnsim::engine::SweepResult;
use pnsim::C64;

fn pnsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("PNSIM_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_FRAME: &str = r#""frame": {"n_fft": 64, "n_active": 32, "n_symbols": 2, "mod_order": 4, "fs": 1966.08e6}"#;

fn small_run_config(extra: &str) -> String {
    format!(
        r#"{{ {SMALL_FRAME},
  "phase_noise": {{"wiener_step_variance": 1e-3}},
  "patterns": [{{"type": "distributed", "l": 8}}, {{"type": "contiguous", "ng": 2, "ns": 2}}],
  "estimators": [{{"name": "cpee"}}, {{"name": "li"}}, {{"name": "dct", "n_d": 2}}, {{"name": "if"}}],
  "snr_db": [5, 15],
  "max_frames": 12,
  "min_errors": 20,
  "covariance": {{"training_frames": 100}}
  {extra}
}}"#
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", &small_run_config(""));
    let o = pnsim(&["run", "--config", cfg.to_str().unwrap(), "--out", "res", "--workers", "1"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("res/sweep.csv")).unwrap();
    let parsed = SweepResult::from_csv(&csv).unwrap();
    assert_eq!(parsed.rows.len(), 2 * 4 * 2);
    assert_eq!(parsed.to_csv(), csv);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["csv_sha256"], parsed.csv_sha256());
    assert_eq!(manifest["config"]["frame"]["n_fft"], 64);
}

#[test]
fn csv_is_identical_across_worker_counts_and_seed_flag_applies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", &small_run_config(""));
    let c = cfg.to_str().unwrap();
    let a = pnsim(&["run", "--config", c, "--out", "w1", "--workers", "1", "--seed", "5"], tmp.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let b = Command::new(env!("CARGO_BIN_EXE_pnsim"))
        .args(["run", "--config", c, "--out", "w8", "--seed", "5"])
        .env("PNSIM_WORKERS", "8")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(b.status.success(), "{}", stderr(&b));
    let x = std::fs::read(tmp.path().join("w1/sweep.csv")).unwrap();
    let y = std::fs::read(tmp.path().join("w8/sweep.csv")).unwrap();
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().lines().nth(1).unwrap().ends_with(",5"));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("w8/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["workers"], 8);
}

#[test]
fn dct_with_too_few_pilots_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.json",
        r#"{"patterns": [{"type": "contiguous", "ng": 3, "ns": 1}], "estimators": [{"name": "dct", "n_d": 5}]}"#,
    );
    let o = pnsim(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("N_D <= K"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn non_divisor_spacing_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", r#"{"patterns": [{"type": "distributed", "l": 3}]}"#);
    let o = pnsim(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L = 3 must divide N_a = 1024"), "{}", stderr(&o));
}

#[test]
fn malformed_and_missing_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", r#"{"frame": {"n_fft": "big"}}"#);
    assert_eq!(pnsim(&["run", "--config", cfg.to_str().unwrap()], tmp.path()).status.code(), Some(2));
    let o = pnsim(&["run", "--config", "does-not-exist.json"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(pnsim(&["run", "--bogus-flag"], tmp.path()).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.json",
        &format!(r#"{{ {SMALL_FRAME}, "estimators": [{{"name": "cpee"}}], "snr_db": [10], "max_frames": 2 }}"#),
    );
    write(tmp.path(), "blocker", "a file, not a directory");
    let o = pnsim(&["run", "--config", cfg.to_str().unwrap(), "--out", "blocker/sub"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn oracle_check_small_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = write(
        tmp.path(),
        "zero.json",
        r#"{"frame": {"n_fft": 16, "n_active": 8, "n_symbols": 1}, "patterns": [{"type": "distributed", "l": 4}], "estimators": [{"name": "li"}]}"#,
    );
    let o = pnsim(&["oracle-check", "--config", zero.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS"));
    assert!(out.contains("also agree"), "{out}");

    let noisy = write(
        tmp.path(),
        "noisy.json",
        r#"{"frame": {"n_fft": 16, "n_active": 8, "n_symbols": 1}, "phase_noise": {"wiener_step_variance": 0.05},
            "patterns": [{"type": "distributed", "l": 4}], "estimators": [{"name": "li"}], "oracle_trials": 10}"#,
    );
    let o = pnsim(&["oracle-check", "--config", noisy.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 10);
    assert!(out.contains("divergence report"), "{out}");

    let big = write(
        tmp.path(),
        "big.json",
        r#"{"frame": {"n_fft": 128, "n_active": 64, "n_symbols": 1}, "patterns": [{"type": "distributed", "l": 4}], "estimators": [{"name": "li"}]}"#,
    );
    let o = pnsim(&["oracle-check", "--config", big.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resource limit"), "{}", stderr(&o));
}

fn cache_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn train_is_deterministic_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.json", &small_run_config(""));
    let c = cfg.to_str().unwrap();
    assert!(pnsim(&["train", "--config", c, "--out", "a"], tmp.path()).status.success());
    assert!(pnsim(&["train", "--config", c, "--out", "b", "--workers", "3"], tmp.path()).status.success());
    let a = cache_files(&tmp.path().join("a"));
    let b = cache_files(&tmp.path().join("b"));
    assert_eq!(a.len(), 1);
    assert_eq!(std::fs::read(&a[0]).unwrap(), std::fs::read(&b[0]).unwrap());
    let set = CovarianceSet::load(&a[0]).unwrap();
    assert_eq!(set.n_active(), 32);
    set.validate().unwrap();

    // the cache feeds a run
    let with_cache = small_run_config(&format!(r#", "covariance": {{"cache": "{}"}}"#, a[0].display()))
        .replace(r#""covariance": {"training_frames": 100}"#, r#""seed": 1"#);
    let cfg2 = write(tmp.path(), "cached.json", &with_cache);
    let o = pnsim(&["run", "--config", cfg2.to_str().unwrap(), "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("loaded covariance cache"));
}

#[test]
fn zero_power_training_gives_trivial_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "off.json",
        r#"{"psd0_dbc_hz": "-inf", "f_carrier_ref_hz": 140e9, "zeros": [], "poles": []}"#,
    );
    let cfg = write(
        tmp.path(),
        "run.json",
        &format!(r#"{{ {SMALL_FRAME}, "phase_noise": {{"psd": "off.json"}}, "estimators": [{{"name": "if"}}], "covariance": {{"training_frames": 100}} }}"#),
    );
    let o = pnsim(&["train", "--config", cfg.to_str().unwrap(), "--out", "c"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let files = cache_files(&tmp.path().join("c"));
    assert!(files[0].file_name().unwrap().to_string_lossy().starts_with("covariance_off_"));
    let set = CovarianceSet::load(&files[0]).unwrap();
    assert!(set.r_phi.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
    assert!(set.r_beta.iter().all(|v| v.norm() < 1e-12));
}
