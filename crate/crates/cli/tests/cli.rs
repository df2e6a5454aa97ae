//! End-to-end runs of the command-line driver.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-aft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn simulate(dir: &Path, grid: &str, reps: &str, seed: &str) {
    let out = run(&[
        "simulate", "--grid", grid, "--replicates", reps, "--censoring", "0.5", "--seed", seed, "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_dataset_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sim");
    simulate(&dir, "5x5", "52", "7");
    let csv = read(&dir.join("dataset.csv"));
    assert_eq!(csv.lines().count(), 1301);
    let truth: serde_json::Value = serde_json::from_str(&read(&dir.join("dataset.truth.json"))).unwrap();
    assert_eq!(truth["n_units"], 1300);
    assert_eq!(truth["v"].as_array().unwrap().len(), 25);
    let rate = truth["realized_censoring_rate"].as_f64().unwrap();
    assert!((rate - 0.5).abs() <= 0.05);
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["command"]["subcommand"], "simulate");
    assert_eq!(manifest["config"]["command"]["seed"], 7);
}

#[test]
fn fit_then_summarize() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "3x3", "12", "1");
    let fit = tmp.path().join("fit");
    let out = run(&[
        "fit", "--data", sim.join("dataset.csv").to_str().unwrap(), "--schema", "generic", "--grid", "3x3",
        "--model", "m2", "--family", "lognormal", "--priors", "simulation", "--warmup", "100", "--draws", "60",
        "--chains", "2", "--seed", "4", "--out", fit.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let draws = read(&fit.join("draws.csv"));
    assert_eq!(draws.lines().count(), 121);
    assert!(draws.starts_with("chain,draw,beta[intercept],beta[level1],beta[level2],beta[level3],sigma,"));
    let diag: serde_json::Value = serde_json::from_str(&read(&fit.join("diagnostics.json"))).unwrap();
    assert_eq!(diag["n_chains"], 2);

    let sum = tmp.path().join("sum");
    let out = run(&["summarize", "--draws", fit.join("draws.csv").to_str().unwrap(), "--out", sum.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read(&sum.join("summary.csv"));
    assert!(summary.starts_with("Name,Parameter,Mean,SD,Lower,Upper\n"));
    assert!(summary.contains("Error variance,sigma2,"));
    assert!(read(&sum.join("logical_correlation.csv")).starts_with("distance_r,distance_c,correlation\n0,0,1\n"));
    assert!(sum.join("physical_correlation.csv").exists());
}

const GPU: &str = "unit_id,time,event,row,col,cage,slot,node,batch
a,10,1,1,1,1,8,4,old
b,12,0,1,2,2,8,4,old
c,3,1,2,1,3,8,4,old
d,5,1,2,2,1,1,1,new
e,7,1,1,1,2,2,2,old
f,9,0,2,2,3,3,3,old
";

#[test]
fn km_by_cage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("gpu.csv");
    std::fs::write(&data, GPU).unwrap();
    let out_dir = tmp.path().join("km");
    let out = run(&["km", "--data", data.to_str().unwrap(), "--strata", "cage", "--filter-batch", "old", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let km = read(&out_dir.join("km.csv"));
    assert!(km.starts_with("time,survival,lower,upper,stratum\n0,1,1,1,1\n"));
    let lr = read(&out_dir.join("logrank.csv"));
    assert_eq!(lr.lines().nth(1).unwrap().split(',').nth(1), Some("2"));
}

#[test]
fn validate_kernel_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("vk");
    let out = run(&["validate-kernel", "--grid", "4x4", "--kappa", "0.5,1", "--nu", "0.5,2", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let sweep = read(&out_dir.join("kernel_sweep.csv"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 2 * 2);
    assert!(sweep.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn exit_codes_and_error_records() {
    let tmp = tempfile::tempdir().unwrap();
    let usage = run(&["fit", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));

    let missing = run(&["fit", "--data", "/nonexistent.csv", "--grid", "2x2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&missing.stderr).trim()).unwrap();
    assert_eq!(record["error"], "io");

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "unit_id,time,event,row,col,cage,slot,node\na,1,1,1,1,4,1,1\n").unwrap();
    let invalid = run(&["fit", "--data", bad.to_str().unwrap(), "--grid", "2x2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(invalid.status.code(), Some(3));
    let record: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&invalid.stderr).trim()).unwrap();
    assert_eq!(record["error"], "validation");
    assert_eq!(record["line"], 2);

    // A grossly inadequate warmup leaves the chains apart.
    let sim = tmp.path().join("sim");
    simulate(&sim, "2x2", "20", "3");
    let strict = run(&[
        "fit", "--data", sim.join("dataset.csv").to_str().unwrap(), "--schema", "generic", "--grid", "2x2",
        "--warmup", "0", "--draws", "60", "--chains", "2", "--max-steps", "1", "--seed", "1", "--strict", "--out",
        tmp.path().join("strict").to_str().unwrap(),
    ]);
    assert_eq!(strict.status.code(), Some(5), "{}", String::from_utf8_lossy(&strict.stderr));
}
