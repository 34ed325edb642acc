use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn instance(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances").join(format!("{name}.json"))
}

fn riskdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskdp")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn solve(name: &str, out: &Path, extra: &[&str]) -> Output {
    let input = instance(name);
    let mut args = vec!["solve", input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-timing"];
    args.extend_from_slice(extra);
    riskdp(&args)
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn newsvendor_solve_matches_oracle() {
    let dir = TempDir::new().unwrap();
    let o = solve("newsvendor", dir.path(), &["--alg", "alg1", "--iters", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reference = riskdp::oracle::extensive_form_value(&riskdp::Problem::from_path(instance("newsvendor")).unwrap())
        .unwrap()
        .value;
    let s = summary(dir.path());
    assert!((s["lower_bound"].as_f64().unwrap() - reference).abs() <= 1e-6);
    assert_eq!(s["seed"], 0);
    assert!(dir.path().join("cuts.csv").exists());
}

#[test]
fn summary_lower_bound_equals_last_log_row() {
    let dir = TempDir::new().unwrap();
    let o = solve("inventory_lattice", dir.path(), &["--iters", "7", "--stall-window", "0", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let log = fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "k,lower_bound,x1_1,x1_2,cuts_opt_added,cuts_feas_added,backtracks,wall_ms");
    let last = lines.last().unwrap();
    let from_log: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    let s = summary(dir.path());
    assert_eq!(s["lower_bound"].as_f64().unwrap().to_bits(), from_log.to_bits());
    assert_eq!(s["iters"], 7);
    assert_eq!(s["status"], "iter_limit");
}

#[test]
fn infeasible_problem_exits_one() {
    let dir = TempDir::new().unwrap();
    let o = solve("infeasible", dir.path(), &["--alg", "alg2"]);
    assert_eq!(code(&o), 1);
    let s = summary(dir.path());
    assert_eq!(s["status"], "infeasible");
    assert!(s["lower_bound"].is_null());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&riskdp(&["solve"])), 2);
    assert_eq!(code(&riskdp(&["solve", "x.json", "--bogus"])), 2);
    assert_eq!(code(&riskdp(&["solve", "x.json", "--alg", "alg9"])), 2);
    assert_eq!(code(&riskdp(&["solve", "x.json", "--oracle-check", "every:0"])), 2);
    assert_eq!(code(&riskdp(&["solve", "x.json", "--risk-override", "cvar:0"])), 2);
    let p = instance("newsvendor");
    let p = p.to_str().unwrap();
    assert_eq!(code(&riskdp(&["oracle", p, "--method", "nested", "--method", "extensive-form"])), 2);
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&solve("newsvendor", dir.path(), &["--alg", "alg3"])), 2);
    assert_eq!(code(&riskdp(&["--help"])), 0);
}

#[test]
fn accepted_flag_combination() {
    let dir = TempDir::new().unwrap();
    let o = solve(
        "newsvendor",
        dir.path(),
        &["--alg", "alg1", "--iters", "200", "--seed", "7", "--risk-override", "cvar:0.1", "--cut-timing", "forward", "--oracle-check", "final", "--threads", "2"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(dir.path())["seed"], 7);
}

#[test]
fn io_and_model_errors_exit_three() {
    assert_eq!(code(&riskdp(&["solve", "/nonexistent/problem.json"])), 3);
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    let mut p: Value = serde_json::from_str(&fs::read_to_string(instance("newsvendor")).unwrap()).unwrap();
    p["stages"][1]["realizations"][0]["prob"] = Value::from(0.9);
    fs::write(&bad, p.to_string()).unwrap();
    let o = riskdp(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("probabilities"));
    assert_eq!(code(&riskdp(&["solve", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 3);
}

#[test]
fn shipped_instances_validate() {
    for name in ["newsvendor", "newsvendor_cvar", "no_complete_recourse", "infeasible", "inventory_tree", "inventory_lattice"] {
        let o = riskdp(&["validate", instance(name).to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn oracle_methods() {
    let news = instance("newsvendor");
    let o = riskdp(&["oracle", news.to_str().unwrap(), "--method", "extensive-form"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "extensive-form");
    assert!((v["value"].as_f64().unwrap() - 1.5).abs() <= 1e-9);

    let o = riskdp(&["oracle", news.to_str().unwrap(), "--risk-override", "cvar:0.5"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "nested");
    assert!((v["value"].as_f64().unwrap() - 2.0).abs() <= 1e-9);

    let o = riskdp(&["oracle", instance("inventory_tree").to_str().unwrap(), "--method", "extensive-form"]);
    assert_eq!(code(&o), 2);

    let dir = TempDir::new().unwrap();
    let o = riskdp(&["oracle", instance("infeasible").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(fs::read_to_string(dir.path().join("oracle.json")).unwrap().contains("infeasible"));
}

#[test]
fn check_cuts_accepts_valid_dumps_and_rejects_tampered_ones() {
    for (name, alg) in [("inventory_tree", "alg3"), ("no_complete_recourse", "alg2"), ("inventory_lattice", "alg1")] {
        let dir = TempDir::new().unwrap();
        assert_eq!(code(&solve(name, dir.path(), &["--alg", alg, "--iters", "30"])), 0);
        let cuts = dir.path().join("cuts.csv");
        let o = riskdp(&["check-cuts", instance(name).to_str().unwrap(), cuts.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stdout));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["violations"], 0);
        assert!(v["checked"].as_u64().unwrap() > 0);

        let text = fs::read_to_string(&cuts).unwrap();
        let first_opt = text.lines().position(|l| l.starts_with("opt,")).unwrap();
        let tampered: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                if i != first_opt {
                    return l.to_string();
                }
                let mut f: Vec<String> = l.split(',').map(String::from).collect();
                f[3] = (f[3].parse::<f64>().unwrap() + 100.0).to_string();
                f.join(",")
            })
            .collect();
        fs::write(&cuts, tampered.join("\n") + "\n").unwrap();
        let o = riskdp(&["check-cuts", instance(name).to_str().unwrap(), cuts.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{name}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn outputs_are_reproducible_across_thread_counts() {
    let read = |d: &Path| {
        ["iterations.csv", "cuts.csv", "summary.json"].map(|f| fs::read(d.join(f)).unwrap())
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    solve("inventory_tree", a.path(), &["--threads", "4", "--seed", "11", "--iters", "25", "--stall-window", "0"]);
    solve("inventory_tree", b.path(), &["--threads", "1", "--seed", "11", "--iters", "25", "--stall-window", "0"]);
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn log_level_comes_from_environment() {
    let dir = TempDir::new().unwrap();
    let input = instance("newsvendor");
    let o = Command::new(env!("CARGO_BIN_EXE_riskdp"))
        .args(["solve", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--iters", "2"])
        .env("RISKDP_LOG", "info")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("lower bound"));
    let o = Command::new(env!("CARGO_BIN_EXE_riskdp"))
        .args(["solve", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--iters", "2"])
        .env("RISKDP_LOG", "error")
        .output()
        .unwrap();
    assert!(o.stderr.is_empty());
}
