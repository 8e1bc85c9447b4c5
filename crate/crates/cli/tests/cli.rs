use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn rie(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rie")).args(args).env("RIE_THREADS", "1").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic toy data: a binary and a continuous treatment, two covariates.
fn toy_csv(dir: &Path) -> PathBuf {
    let mut text = String::from("y,a1,a2,w1,w2,wt\n");
    for i in 0..150 {
        let w1 = ((i as f64) * 1.7).sin() * 1.5;
        let w2 = ((i as f64) * 0.37).cos();
        let a1 = u8::from(w1 + 0.5 * ((i as f64) * 2.9).sin() > 0.2);
        let a2 = 2.0 + w2 + ((i as f64) * 0.61).sin();
        let y = 1.0 + w1 + 0.5 * w2 + 2.0 * f64::from(a1) + 0.3 * a2 + ((i as f64) * 3.3).cos();
        let wt = 0.5 + (i % 4) as f64 * 0.25;
        text.push_str(&format!("{y},{a1},{a2},{w1},{w2},{wt}\n"));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, outcome: &str, methods: &str) -> PathBuf {
    toy_csv(dir);
    let text = format!(
        r#"data = "toy.csv"
output = "out"
seed = 11
folds = 5
methods = [{methods}]

[schema]
outcome = "{outcome}"
treatments = ["a1", "a2"]
covariates = ["w1", "w2"]
survey_weight = "wt"

[[intervention]]
treatment = "a1"
kind = "set_binary"
target = 0

[[intervention]]
name = "a2_floor"
treatment = "a2"
kind = "floor"
target = 2.5
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

const ALL_METHODS: &str = r#""ols", "naive_ipw", "matching", "ensemble_ipw""#;

#[test]
fn estimate_writes_all_artifacts_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y", ALL_METHODS);
    let o = rie(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["estimates.csv", "weights.csv", "balance_pre.csv", "balance_post.csv", "pscore_hist.csv", "positivity.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("config_input.toml").is_file() && out.join("config_effective.toml").is_file());
    let first = fs::read(out.join("estimates.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,intervention,psi,se,ci_low,ci_high,binding_share,n,flags"));
    assert_eq!(lines.count(), 4 * 2);
    assert!(text.contains("a1_set_binary_0") && text.contains("a2_floor"));

    let again = rie(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(fs::read(out.join("estimates.csv")).unwrap(), first);
}

#[test]
fn flags_override_config_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y", ALL_METHODS);
    let out = tmp.path().join("elsewhere");
    let o = rie(&["estimate", "-c", cfg.to_str().unwrap(), "--methods", "ols", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
    let effective = fs::read_to_string(out.join("config_effective.toml")).unwrap();
    assert!(effective.contains("methods = [\"ols\"]"), "{effective}");
}

#[test]
fn missing_outcome_column_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "income", ALL_METHODS);
    let o = rie(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("income"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_cell_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y", ALL_METHODS);
    let csv = tmp.path().join("toy.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push_str("2.0,1,2.2,abc,0.1,1\n");
    fs::write(&csv, text).unwrap();
    let o = rie(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("151") && err.contains("w1"), "{err}");
}

#[test]
fn unknown_method_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y", r#""lasso""#);
    let o = rie(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn balance_command_writes_both_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y", ALL_METHODS);
    let o = rie(&["balance", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pre = fs::read_to_string(tmp.path().join("out/balance_pre.csv")).unwrap();
    let post = fs::read_to_string(tmp.path().join("out/balance_post.csv")).unwrap();
    assert!(pre.starts_with("intervention,covariate,smd,ci_low,ci_high,adjusted\n"));
    // Two covariates times two interventions.
    assert_eq!(pre.lines().count(), 5);
    assert!(post.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn fast_simulation_smoke() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let start = Instant::now();
    let o = rie(&["simulate", "--runs", "2", "--fast", "--seed", "3", "--raw", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));
    let text = fs::read_to_string(out.join("simstudy.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,noise_dims,bias,se,rmse"));
    assert_eq!(lines.count(), 4 * 3);
    let raw = fs::read_to_string(out.join("simstudy_raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 3 * 4);
}

#[test]
fn simulate_requires_a_seed() {
    let o = rie(&["simulate", "--runs", "1", "--fast"]);
    assert_eq!(o.status.code(), Some(2));
}

fn estimates_file(dir: &Path, name: &str, rows: &[(&str, f64, f64)]) -> PathBuf {
    let mut text = String::from("method,intervention,psi,se,ci_low,ci_high,binding_share,n,flags\n");
    for (iv, psi, se) in rows {
        text.push_str(&format!("ols,{iv},{psi},{se},{},{},0.5,100,\n", psi - 1.96 * se, psi + 1.96 * se));
    }
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn combine_pools_by_key() {
    let tmp = TempDir::new().unwrap();
    let files: Vec<PathBuf> = [1.0, 2.0, 3.0]
        .iter()
        .enumerate()
        .map(|(m, &psi)| estimates_file(tmp.path(), &format!("m{m}.csv"), &[("iv", psi, 1.0), ("other", 4.0, 0.5)]))
        .collect();
    let out = tmp.path().join("pooled.csv");
    let mut args = vec!["combine", "--out", out.to_str().unwrap()];
    args.extend(files.iter().map(|p| p.to_str().unwrap()));
    let o = rie(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "iv");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 2.0);
    assert!((rows[0][3].parse::<f64>().unwrap() - 1.5275).abs() < 1e-4);
    assert_eq!(rows[0][8], "imputations=3");
    // Identical inputs: no between-imputation variance.
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 4.0);
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn combine_rejects_single_file_and_key_mismatch() {
    let tmp = TempDir::new().unwrap();
    let a = estimates_file(tmp.path(), "a.csv", &[("iv", 1.0, 1.0)]);
    let b = estimates_file(tmp.path(), "b.csv", &[("other", 1.0, 1.0)]);
    let out = tmp.path().join("p.csv");
    let o = rie(&["combine", "--out", out.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = rie(&["combine", "--out", out.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("keys"));
}
