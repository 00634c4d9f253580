use std::path::Path;
use std::process::Command;

use holofit_core::model::{ProductTarget, TargetFunction};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_holofit");

/// Columns whose values depend on wall time.
const TIMING: &[&str] = &["solve_seconds", "dnn_seconds"];

fn run(args: &[&str]) -> std::process::Output {
    let out = Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_results(dir: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn without_timing(header: &[String], rows: &[Vec<String>]) -> Vec<Vec<String>> {
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !TIMING.contains(&header[i].as_str())).collect();
    rows.iter().map(|r| keep.iter().map(|&i| r[i].clone()).collect()).collect()
}

fn small_learn() -> Value {
    json!({
        "version": 1,
        "target": { "kind": "product", "d": 3, "deltas": { "power": 1.5 } },
        "m_grid": [20, 40],
        "seeds": 2,
        "solver": { "lambda": { "scaled": 0.25 }, "gamma": 1e-6, "max_iters": 5000 },
        "index_set": { "budget": { "factor": 2.0 } },
        "prune": "quarter",
        "n_mc": 2000,
        "seed": 11
    })
}

#[test]
fn bestterm_writes_results_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({ "version": 1, "power": 1.5, "dims": [4, 8], "s_max": 60, "fit_range": [5, 50] });
    let path = write_config(tmp.path(), "bt.json", &cfg);
    let out = tmp.path().join("out");
    let stdout = run(&["bestterm", "--config", &path, "--out", out.to_str().unwrap()]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("d =  8"));
    let (header, rows) = read_results(&out);
    assert_eq!(rows.len(), 2 * 61);
    for col in ["build_id", "config_digest", "seed", "d", "s", "sigma_s"] {
        assert!(header.iter().any(|h| h == col), "missing column {col}");
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["format"], "holofit-results");
    assert_eq!(meta["experiment"], "bestterm");
    assert_eq!(meta["rows"], 122);
    assert_eq!(meta["config"]["dims"], json!([4, 8]));
    assert_eq!(meta["summary"].as_array().unwrap().len(), 2);
}

#[test]
fn learn_is_reproducible_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "learn.json", &small_learn());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&["learn", "--config", &path, "--out", a.to_str().unwrap(), "--threads", "1"]);
    run(&["learn", "--config", &path, "--out", b.to_str().unwrap(), "--threads", "2"]);
    let (ha, ra) = read_results(&a);
    let (hb, rb) = read_results(&b);
    assert_eq!(ha, hb);
    assert_eq!(ra.len(), 4);
    assert_eq!(without_timing(&ha, &ra), without_timing(&hb, &rb));
}

#[test]
fn seed_override_changes_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "learn.json", &small_learn());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&["learn", "--config", &path, "--out", a.to_str().unwrap()]);
    run(&["learn", "--config", &path, "--out", b.to_str().unwrap(), "--seed", "12"]);
    let (h, ra) = read_results(&a);
    let (_, rb) = read_results(&b);
    let col = h.iter().position(|c| c == "l2_error").unwrap();
    assert_ne!(ra[0][col], rb[0][col]);
}

#[test]
fn rejects_bad_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_learn();
    cfg["version"] = json!(2);
    let path = write_config(tmp.path(), "v2.json", &cfg);
    let out = Command::new(BIN)
        .args(["learn", "--config", &path, "--out", tmp.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let mut cfg = small_learn();
    cfg["unknown_field"] = json!(1);
    let path = write_config(tmp.path(), "extra.json", &cfg);
    let out = Command::new(BIN)
        .args(["learn", "--config", &path, "--out", tmp.path().join("o2").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn saved_network_evaluates_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_learn();
    cfg["m_grid"] = json!([60]);
    cfg["seeds"] = json!(1);
    cfg["prune"] = json!("none");
    cfg["dnn"] = json!({ "delta": 1e-3, "save_networks": true });
    let path = write_config(tmp.path(), "dnn.json", &cfg);
    let out = tmp.path().join("out");
    run(&["learn-dnn", "--config", &path, "--out", out.to_str().unwrap()]);
    let (h, rows) = read_results(&out);
    let status = h.iter().position(|c| c == "status").unwrap();
    assert_eq!(rows[0][status], "ok");

    let net = out.join("networks").join("m60_r0_n0.hfnet");
    assert!(net.exists());
    let points = [[0.1, -0.5, 0.9], [-1.0, 1.0, 0.0], [0.3, 0.3, -0.7]];
    let mut csv = String::from("y1,y2,y3\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    let input = tmp.path().join("points.csv");
    std::fs::write(&input, csv).unwrap();
    let pred = tmp.path().join("pred.csv");
    run(&["eval", "--network", net.to_str().unwrap(), "--input", input.to_str().unwrap(), "--out", pred.to_str().unwrap()]);

    let target = ProductTarget::power_law(3, 1.5).unwrap();
    let mut rdr = csv::Reader::from_path(&pred).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["phi1"]);
    let values: Vec<f64> = rdr.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(values.len(), points.len());
    for (p, v) in points.iter().zip(&values) {
        let f = target.evaluate_scalar(p).unwrap();
        assert!((f - v).abs() < 0.1, "f = {f}, network = {v}");
    }
}
