use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn onebit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit")).args(args).current_dir(dir).output().expect("binary runs")
}

fn json_out(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn sample_record(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["sample", "--out", name];
    args.extend_from_slice(extra);
    let o = onebit(&args, dir);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_zero_components() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_out(&onebit(&["synth", "--components", "[]", "--n", "8"], dir.path()));
    assert_eq!(v, serde_json::json!([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
}

#[test]
fn synth_example1_values() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_out(&onebit(&["synth", "--preset", "example1", "--n", "1024"], dir.path()));
    let x: Vec<f64> = v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(x.len(), 1024);
    let f = [0.11, 0.11 + 1.0 / 1024.0, 0.2, 0.3, 0.37, 0.45];
    let a = [1.0, 1.0, 0.7, 0.8, 0.6, 0.5];
    let p = [7.0 * PI / 6.0, PI / 6.0, PI / 2.0, PI / 4.0, 11.0 * PI / 6.0, PI];
    for t in [0usize, 1, 517, 1023] {
        let want: f64 = (0..6).map(|k| a[k] * (TAU * f[k] * t as f64 + p[k]).sin()).sum();
        assert!((x[t] - want).abs() < 1e-9, "t={t}: {} vs {want}", x[t]);
    }
}

#[test]
fn synth_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&onebit(&["synth", "--components", "[]", "--n", "0"], dir.path())), 2);
    assert_eq!(code(&onebit(&["synth", "--n", "8"], dir.path())), 2);
    assert_eq!(code(&onebit(&["synth", "--preset", "example9", "--n", "8"], dir.path())), 2);
    assert_eq!(code(&onebit(&["synth", "--components", "[{\"A\":1}]", "--n", "8"], dir.path())), 2);
    assert_eq!(code(&onebit(&["synth", "--components", "[]", "--n", "8", "--bogus"], dir.path())), 2);
}

#[test]
fn sample_fixed_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    sample_record(p, "r.json", &["--preset", "example1", "--n", "64", "--threshold", "fixed:0.5", "--snr", "10", "--seed", "1"]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert!(v["h"].as_array().unwrap().iter().all(|h| h.as_f64() == Some(0.5)));
    assert!(v["y"].as_array().unwrap().iter().all(|y| y.as_i64().unwrap().abs() == 1));
    assert_eq!(v["truth"]["components"].as_array().unwrap().len(), 6);
}

#[test]
fn sample_discrete_levels_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["--preset", "example1", "--n", "256", "--threshold", "discrete:8:-1:1", "--snr", "10", "--seed", "3"];
    sample_record(p, "a.json", &args);
    sample_record(p, "b.json", &args);
    let a = std::fs::read(p.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.json")).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    let levels: Vec<f64> = (0..8).map(|i| -1.0 + 2.0 * i as f64 / 7.0).collect();
    for h in v["h"].as_array().unwrap() {
        let h = h.as_f64().unwrap();
        assert!(levels.iter().any(|l| (l - h).abs() < 1e-12), "h = {h}");
    }
}

#[test]
fn sample_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = onebit(&["sample", "--preset", "example1", "--n", "64", "--snr", "10"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn estimate_fixed_order_and_bic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    sample_record(p, "r.json", &["--preset", "example1", "--n", "256", "--snr", "10", "--seed", "2"]);
    let v = json_out(&onebit(&["estimate", "--method", "mmrelax", "--order", "6", "r.json"], p));
    assert_eq!(v["order"], 6);
    assert_eq!(v["components"].as_array().unwrap().len(), 6);
    assert_eq!(v["method"], "mmrelax");
    for key in ["dim", "sigma", "lambda", "nll_per_order", "bic_per_order", "iters", "elapsed_ms"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }

    let v = json_out(&onebit(&["estimate", "--method", "clean", "--bic", "10", "r.json"], p));
    assert_eq!(v["bic_per_order"].as_array().unwrap().len(), 11);
    assert_eq!(v["nll_per_order"].as_array().unwrap().len(), 11);
}

#[test]
fn estimate_resolves_example2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let n = 1024.0;
    sample_record(p, "r.json", &["--preset", "example2", "--n", "1024", "--snr", "10", "--seed", "1"]);
    let v = json_out(&onebit(&["estimate", "--method", "relax", "--order", "2", "r.json"], p));
    let mut w: Vec<f64> = v["components"].as_array().unwrap().iter().map(|c| c["omega"].as_f64().unwrap()).collect();
    w.sort_by(f64::total_cmp);
    let truth = [0.108 * TAU, (0.108 + 0.5 / n) * TAU];
    for (e, t) in w.iter().zip(truth) {
        assert!((e - t).abs() < PI / (2.0 * n), "{e} vs {t}");
    }
}

#[test]
fn estimate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    sample_record(p, "r.json", &["--preset", "example1", "--n", "128", "--snr", "5", "--seed", "9"]);
    let a = onebit(&["estimate", "--method", "mmrelax", "--bic", "4", "r.json"], p);
    let b = onebit(&["estimate", "--method", "mmrelax", "--bic", "4", "r.json"], p);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn estimate_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "{").unwrap();
    std::fs::write(p.join("odd.json"), r#"{"dim":"r1","n":3,"y":[1,2,1],"h":[0,0,0]}"#).unwrap();
    assert_eq!(code(&onebit(&["estimate", "--order", "1", "bad.json"], p)), 3);
    assert_eq!(code(&onebit(&["estimate", "--order", "1", "odd.json"], p)), 3);
    assert_eq!(code(&onebit(&["estimate", "--order", "1", "missing.json"], p)), 3);
    assert_eq!(code(&onebit(&["estimate", "--order", "1", "--bic", "2", "bad.json"], p)), 2);
    assert_eq!(code(&onebit(&["estimate", "--method", "music", "--order", "1", "bad.json"], p)), 2);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    sample_record(p, "r.json", &["--preset", "example2", "--n", "128", "--snr", "10", "--seed", "4"]);
    std::fs::write(p.join("c.json"), r#"{"method": "clean", "bic": 3, "record": "r.json"}"#).unwrap();
    let v = json_out(&onebit(&["estimate", "--config", "c.json"], p));
    assert_eq!(v["method"], "clean");
    assert_eq!(v["bic_per_order"].as_array().unwrap().len(), 4);
    // command-line flags take precedence
    let v = json_out(&onebit(&["estimate", "--config", "c.json", "--method", "mmrelax"], p));
    assert_eq!(v["method"], "mmrelax");
    std::fs::write(p.join("u.json"), r#"{"colour": "blue"}"#).unwrap();
    assert_eq!(code(&onebit(&["estimate", "--config", "u.json", "--order", "1", "r.json"], p)), 2);
}

const CSV_HEADER: &str = "sweep_var,sweep_value,estimator,trials,detected,freq_mse,amp_mse,pd,order_success,mean_runtime_ms";

#[test]
fn bench_preset_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["bench", "--preset", "example2", "--trials", "1", "--seed", "7", "--sweep", "20"];
    let a = onebit(&args, p);
    assert!(a.status.success(), "stderr: {}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    let est: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(est, ["1bCLEAN", "1bMMRELAX", "1bRELAX"]);
    assert_eq!(onebit(&args, p).stdout, a.stdout);
}

#[test]
fn bench_scenario_file_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let sc = r#"{
        "name": "single",
        "signal": {"kind": "custom", "dim": "c1", "components": [{"A": 1.0, "phi": 0.2, "omega": 5.0}]},
        "n": 64, "snr_db": 20.0, "sweep_var": "snr", "sweep": [10.0, 20.0],
        "trials": 3, "seed": 11, "estimators": ["mmrelax"], "order": {"fixed": 1}
    }"#;
    std::fs::write(p.join("sc.json"), sc).unwrap();
    let o = onebit(&["bench", "--scenario", "sc.json", "--out", "out.csv", "--scatter", "sc_trials.json"], p);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(p.join("out.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[0], "snr");
        assert_eq!(r[3], "3");
        assert_eq!(r[7], "1e0");
    }
    let scatter: Value = serde_json::from_str(&std::fs::read_to_string(p.join("sc_trials.json")).unwrap()).unwrap();
    assert_eq!(scatter["points"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&onebit(&["bench", "--preset", "example2", "--scenario", "x.json"], p)), 2);
    assert_eq!(code(&onebit(&["bench"], p)), 2);
    assert_eq!(code(&onebit(&["bench", "--preset", "nope"], p)), 2);
    assert_eq!(code(&onebit(&["bench", "--scenario", "absent.json"], p)), 3);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = onebit(&["--help"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("estimate"));
}
