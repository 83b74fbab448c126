use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cde(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cde"))
        .args(args)
        .current_dir(dir)
        .env_remove("CDE_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_json(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn test_ll(text: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with("test_log_likelihood")).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn simulate_writes_a_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = cde(&["simulate", "--sim", "skew", "--n", "100", "--seed", "1", "--out", "a.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("y0: mean"));
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x0,y0");
    assert_eq!(lines.len(), 101);
    cde(&["simulate", "--sim", "skew", "--n", "100", "--seed", "1", "--out", "b.csv"], dir.path());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    let gmm = cde(&["simulate", "--sim", "gmm", "--n", "10", "--out", "g.csv"], dir.path());
    assert_eq!(code(&gmm), 0);
    assert!(fs::read_to_string(dir.path().join("g.csv")).unwrap().starts_with("x0,x1,y0,y1"));
}

#[test]
fn simulate_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cde(&["simulate", "--sim", "skew", "--n", "0", "--out", "a.csv"], dir.path())), 2);
    let bad = cde(&["simulate", "--sim", "skew", "--n", "5", "--out", "missing/dir/a.csv"], dir.path());
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("cannot write"));
    assert_eq!(code(&cde(&["simulate", "--sim", "cauchy", "--n", "5", "--out", "a.csv"], dir.path())), 2);
}

fn fit_config(data: Value, trainer: Value) -> Value {
    json!({
        "data": data,
        "model": {"kind": "mdn", "n_components": 3, "hidden": [16]},
        "trainer": trainer,
        "n_train": 200,
        "seeds": [4]
    })
}

#[test]
fn fit_then_evaluate_reproduces_the_score() {
    let dir = tempfile::tempdir().unwrap();
    let config = fit_config(json!({"simulator": {"kind": "skew_normal"}}), json!({"epochs": 10}));
    let path = write_json(dir.path(), "fit.json", &config);
    let fit = cde(&["fit", "--config", &path, "--out", "model.json", "--test-out", "test.csv"], dir.path());
    assert_eq!(code(&fit), 0, "{}", stderr(&fit));
    assert!(stdout(&fit).contains("final_train_nll"));
    let eval = cde(&["evaluate", "--model", "model.json", "--data", "test.csv"], dir.path());
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert!((test_ll(&stdout(&fit)) - test_ll(&stdout(&eval))).abs() <= 1e-12);
}

#[test]
fn fit_config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&cde(&["fit", "--config", "bad.json", "--out", "m.json"], dir.path())), 2);

    let mut config = fit_config(json!({"simulator": {"kind": "skew_normal"}}), json!({"epochs": 10}));
    config["trainer"]["learning_rte"] = json!(0.1);
    let path = write_json(dir.path(), "typo.json", &config);
    let out = cde(&["fit", "--config", &path, "--out", "m.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("trainer"), "{}", stderr(&out));

    let config = fit_config(json!({"csv": {"path": "nowhere.csv"}}), json!({}));
    let path = write_json(dir.path(), "missing.json", &config);
    assert_eq!(code(&cde(&["fit", "--config", &path, "--out", "m.json"], dir.path())), 2);
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn diverging_fit_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = fit_config(
        json!({"simulator": {"kind": "skew_normal"}}),
        json!({"epochs": 2, "schedule": {"kind": "constant", "h0": 1e200}}),
    );
    let path = write_json(dir.path(), "fit.json", &config);
    let out = cde(&["fit", "--config", &path, "--out", "m.json"], dir.path());
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
}

fn bench_config(models: Value, trainer: Value) -> Value {
    json!({
        "datasets": [{"simulator": {"kind": "skew_normal"}}],
        "models": models,
        "schedules": [{"kind": "rule_of_thumb"}, {"kind": "none"}],
        "n_train": [100],
        "trainer": trainer,
        "seeds": [1, 2]
    })
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn benchmark_resumes_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let config = bench_config(json!([{"kind": "mdn", "hidden": [8]}, {"kind": "nkde"}]), json!({"epochs": 3}));
    let path = write_json(dir.path(), "bench.json", &config);
    let args = ["benchmark", "--config", &path, "--results", "r.jsonl", "--jobs", "2"];
    let first = cde(&args, dir.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let recs = records(&dir.path().join("r.jsonl"));
    assert_eq!(recs.len(), 6);
    let summary = fs::read_to_string(dir.path().join("r.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    let second = cde(&args, dir.path());
    assert_eq!(code(&second), 0);
    assert!(stderr(&second).contains("0 runs pending"), "{}", stderr(&second));
    assert_eq!(records(&dir.path().join("r.jsonl")).len(), 6);
}

#[test]
fn seed_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = bench_config(json!([{"kind": "ckde", "bandwidth": "rule_of_thumb"}]), json!({}));
    let path = write_json(dir.path(), "bench.json", &config);
    let out = Command::new(env!("CARGO_BIN_EXE_cde"))
        .args(["benchmark", "--config", &path, "--results", "r.jsonl", "--summary", "s.csv"])
        .current_dir(dir.path())
        .env("CDE_SEED", "100")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let seeds: Vec<u64> = records(&dir.path().join("r.jsonl")).iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![100, 101]);
    assert!(dir.path().join("s.csv").exists());
}

#[test]
fn benchmark_failures_and_empty_grids() {
    let dir = tempfile::tempdir().unwrap();
    let empty = bench_config(json!([]), json!({}));
    let path = write_json(dir.path(), "empty.json", &empty);
    let out = cde(&["benchmark", "--config", &path, "--results", "e.jsonl"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("models"));

    let failing = bench_config(json!([{"kind": "mdn"}]), json!({"epochs": 1, "batch_size": 500}));
    let path = write_json(dir.path(), "fail.json", &failing);
    let out = cde(&["benchmark", "--config", &path, "--results", "f.jsonl"], dir.path());
    assert_eq!(code(&out), 3);
    let recs = records(&dir.path().join("f.jsonl"));
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r["error"].is_string()));
}

#[test]
fn plotdata_aggregates_records() {
    let dir = tempfile::tempdir().unwrap();
    let rec = |seed: u64, ll: f64| {
        json!({
            "config_hash": "abc", "seed": seed, "dataset": "skew_normal", "model": "mdn",
            "schedule": "none", "regularizer": "none", "lambda": 0.0, "n_train": 200,
            "test_log_likelihood": ll, "test_ll_std_error": 0.1, "kl_to_truth": null,
            "kl_std_error": null, "final_train_nll": 1.0, "error": null, "wall_time_s": 0.5
        })
        .to_string()
    };
    let lines = [rec(1, -1.0), rec(2, -2.0), rec(3, -3.0)].join("\n");
    fs::write(dir.path().join("r.jsonl"), lines).unwrap();
    let out = cde(&["plotdata", "--results", "r.jsonl", "--figure", "schedules", "--out", "p.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "x,series,y,err,n");
    assert_eq!(rows[1], "200,mdn/none,-2.0,1.0,3");

    let bad = cde(&["plotdata", "--results", "r.jsonl", "--figure", "fig9", "--out", "p.csv"], dir.path());
    assert_eq!(code(&bad), 2);
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let empty = cde(&["plotdata", "--results", "empty.jsonl", "--figure", "benchmark", "--out", "p.csv"], dir.path());
    assert_eq!(code(&empty), 2);
}
