use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-is")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = run(&["simulate", "--kind", "poisson-ssm", "--seed", "5", "--out", path(p)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v = read_json(&a);
    assert_eq!(v["type"], "poisson_ssm");
    assert_eq!(v["seed"], 5);
    let y = v["y"].as_array().unwrap();
    assert_eq!(y.len(), 500);
    assert!(y.iter().all(|c| c.as_u64().is_some()));
}

#[test]
fn check_fails_at_extreme_psi_and_impose_repairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ssm.json");
    assert!(run(&["simulate", "--kind", "poisson-ssm", "--seed", "2", "--out", path(&data)]).status.success());

    let verdict = dir.path().join("check.json");
    let o = run(&["check", "--data", path(&data), "--psi", "-1.4,0.99,1", "--out", path(&verdict)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&verdict)["condition_holds"], false);

    let o = run(&["impose", "--data", path(&data), "--psi", "-1.4,0.99,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["blocks"][0]["holds_after"], true);
}

#[test]
fn fig2_writes_one_csv_per_variance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fig2", "--out", path(dir.path())]);
    assert!(o.status.success());
    for v in [5, 10, 25, 40] {
        let text = std::fs::read_to_string(dir.path().join(format!("fig2_v{v}.csv"))).unwrap();
        assert!(text.starts_with("v,t,log_abs_minor,sign\n"));
        assert_eq!(text.lines().count(), 501);
    }
    let r = read_json(&dir.path().join("fig2.json"));
    let crosses: Vec<bool> = r["summary"]["paths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["crosses"].as_bool().unwrap())
        .collect();
    assert_eq!(crosses, vec![true, true, true, false]);
}

#[test]
fn table1_report_reruns_bit_exactly_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = run(&["table1", "--reps", "2", "--samples", "3000", "--seed", "9", "--out", path(&first)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = first.join("table1.json");
    let r = read_json(&report);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["config"]["reps"], 2);
    assert_eq!(r["summary"].as_array().unwrap().len(), 3);

    let second = dir.path().join("second");
    let o = run(&["table1", "--config", path(&report), "--out", path(&second)]);
    assert!(o.status.success());
    // Everything but the timing column must match.
    let strip = |p: &Path| -> Vec<String> {
        let mut rd = csv::Reader::from_path(p).unwrap();
        let cpu = rd.headers().unwrap().iter().position(|h| h == "cpu_secs").unwrap();
        rd.records()
            .map(|r| {
                let r = r.unwrap();
                r.iter().enumerate().filter(|(i, _)| *i != cpu).map(|(_, f)| f).collect::<Vec<_>>().join(",")
            })
            .collect()
    };
    assert_eq!(strip(&first.join("table1.csv")), strip(&second.join("table1.csv")));
    assert_eq!(strip(&first.join("table1.csv")).len(), 6);
}

#[test]
fn toml_config_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "reps = 2\nsamples = 1000\nseed = 4\n").unwrap();
    let o = run(&["table1", "--config", path(&cfg), "--seed", "6", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("table1.json"));
    assert_eq!(r["config"]["seed"], 6);
    assert_eq!(r["config"]["samples"], 1000);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["table1", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["table1", "--preset", "medium"]).status.code(), Some(2));
    assert_eq!(run(&["table1", "--evals", "3"]).status.code(), Some(2));
    assert_eq!(run(&["check", "--data", "/nonexistent/file.json"]).status.code(), Some(2));
    assert_eq!(run(&["loglik", "--data", "x.json", "--sampler", "cauchy"]).status.code(), Some(2));
}

#[test]
fn loglik_and_mcmc_on_a_small_panel() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("panel.json");
    let o = run(&["simulate", "--kind", "panel-ar1", "--panels", "3", "--len", "10", "--out", path(&data)]);
    assert!(o.status.success());

    let out = dir.path().join("ll");
    let o = run(&["loglik", "--data", path(&data), "--sampler", "t:5", "--reps", "4", "--samples", "100", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("loglik.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);

    let out = dir.path().join("mc");
    let o = run(&[
        "mcmc", "--data", path(&data), "--samples", "50", "--iterations", "60", "--burn-in", "60", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("mcmc.json"));
    assert_eq!(r["names"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(out.join("mcmc.csv")).unwrap().lines().count(), 61);
}
