//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use riskdp::cuts::{write_cut_dump, CutKind};
use riskdp::engine::{run, solve_node, write_iteration_log, Algorithm, RunConfig, RunResult, RunStatus, SubproblemRecord};
use riskdp::model::{NodeKey, Problem, Topology};
use riskdp::oracle::{exact_nested_decomposition, extensive_form_value, RecourseOracle};
use riskdp::risk::{cvar_by_minimization, risk_value_and_density};
use riskdp::valuefn::{check_subgradient, subgradient_bound};
use riskdp::RiskSpec;

use common::{lattice_as_tree, random_lattice, random_shape, random_tree, risk_rotation, rng, Shape};

const GAP_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-9;
const VALIDITY_TOL: f64 = 1e-6;
const SUBGRADIENT_TOL: f64 = 1e-7;

struct Line {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

/// A finished run kept for the cross-cutting criteria.
struct Kept {
    label: String,
    problem: Problem,
    result: RunResult,
}

impl Kept {
    fn lower_bounds(&self) -> Vec<f64> {
        self.result.reports.iter().map(|r| r.lower_bound).collect()
    }
}

fn instance(name: &str) -> Problem {
    Problem::from_path(format!("{}/../../instances/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn config(algorithm: Algorithm, max_iters: usize, seed: u64) -> RunConfig {
    RunConfig {
        algorithm,
        max_iters,
        seed,
        stall_window: 0,
        record_timing: false,
        record_subproblems: true,
        ..RunConfig::default()
    }
}

/// First iteration (1-based) whose lower bound is within `GAP_TOL` of `target`.
fn first_hit(result: &RunResult, target: f64) -> Option<usize> {
    result.reports.iter().position(|r| (r.lower_bound - target).abs() <= GAP_TOL).map(|i| i + 1)
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or("never".into(), |k| k.to_string())
}

fn convergence_family(
    runs: &mut Vec<Kept>,
    seeds: std::ops::RangeInclusive<u64>,
    risk: impl Fn(u64) -> Option<RiskSpec>,
    max_iters: usize,
) -> (usize, usize, f64, usize, Vec<String>) {
    let (mut ok, mut total, mut worst, mut slowest) = (0, 0, 0.0f64, 0);
    let mut failures = Vec::new();
    for seed in seeds {
        total += 1;
        let shape = random_shape(&mut rng(seed));
        let p = random_lattice(seed, shape, risk(seed));
        let reference = match &p.risk {
            None => extensive_form_value(&p).map(|r| r.value),
            Some(_) => exact_nested_decomposition(&p).map(|r| r.value),
        };
        let reference = match reference {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("seed {seed}: oracle failed: {e}"));
                continue;
            }
        };
        match run(&p, &config(Algorithm::Alg1, max_iters, seed)) {
            Ok(r) => {
                let hit = first_hit(&r, reference);
                let gap = (r.lower_bound.unwrap() - reference).abs();
                worst = worst.max(gap);
                match hit {
                    Some(k) if gap <= GAP_TOL => {
                        ok += 1;
                        slowest = slowest.max(k);
                    }
                    _ => failures.push(format!("seed {seed} {shape:?}: gap {gap:.3e}, first hit {}", fmt_opt(hit))),
                }
                runs.push(Kept { label: format!("seed {seed}"), problem: p, result: r });
            }
            Err(e) => failures.push(format!("seed {seed}: run failed: {e}")),
        }
    }
    (ok, total, worst, slowest, failures)
}

fn parent_key(topo: &Topology<'_>, key: NodeKey) -> NodeKey {
    match key {
        NodeKey::Lattice { stage: 1, .. } => NodeKey::Root,
        NodeKey::Lattice { stage, .. } => NodeKey::Lattice { stage: stage - 1, index: 0 },
        NodeKey::Tree(i) => topo.tree().unwrap().parent[i].map_or(NodeKey::Root, NodeKey::Tree),
        NodeKey::Root => NodeKey::Root,
    }
}

/// Largest amount by which any pool exceeds the true recourse function at 50
/// random points of its history box.
fn cut_validity(kept: &Kept, r: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut oracle = RecourseOracle::new(&kept.problem).map_err(|e| e.to_string())?;
    let topo = Topology::new(&kept.problem).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for (slot, pool) in kept.result.pools.iter().enumerate() {
        if pool.optimality().is_empty() {
            continue;
        }
        let owner = topo.slot_owner(slot);
        let (lo, hi) = topo.history_box(owner);
        for _ in 0..50 {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| r.gen_range(a..=b)).collect();
            let truth = oracle.value(owner, &x).map_err(|e| e.to_string())?;
            if truth.infeasible {
                continue;
            }
            worst = worst.max(pool.evaluate(&x) - truth.value);
        }
    }
    Ok(worst)
}

fn subgradient_check(kept: &Kept, rec: &SubproblemRecord, r: &mut ChaCha8Rng) -> (usize, f64) {
    let topo = Topology::new(&kept.problem).unwrap();
    let (lo, hi) = topo.history_box(parent_key(&topo, rec.key));
    let pools = &kept.result.pools;
    let q = |x: &[f64]| solve_node(&topo, pools, rec.key, x, rec.view).ok().map(|s| s.value);
    let report = check_subgradient(q, &rec.history, &rec.s, 20, 1.0, &lo, &hi, SUBGRADIENT_TOL, r);
    (report.violations.len(), report.worst_gap)
}

fn is_monotone(lbs: &[f64]) -> bool {
    lbs.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
}

fn logs(problem: &Problem, result: &RunResult) -> (Vec<u8>, Vec<u8>) {
    let mut csv = Vec::new();
    write_iteration_log(&mut csv, problem.dim, &result.reports).unwrap();
    let mut dump = Vec::new();
    write_cut_dump(&mut dump, &result.cut_records).unwrap();
    (csv, dump)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut family_runs: Vec<Kept> = Vec::new();
    let mut other_runs: Vec<Kept> = Vec::new();

    // 1. risk-neutral convergence
    let t1 = Instant::now();
    let (ok, total, worst, slowest, failures) = convergence_family(&mut family_runs, 1..=20, |_| None, 200);
    let secs = t1.elapsed().as_secs_f64();
    let mut trace_diffs = Vec::new();
    for kept in &family_runs {
        let seed = kept.result.seed;
        let alg2 = run(&kept.problem, &config(Algorithm::Alg2, 200, seed)).unwrap();
        if logs(&kept.problem, &alg2) != logs(&kept.problem, &kept.result) {
            trace_diffs.push(kept.label.clone());
        }
    }
    lines.push(Line {
        id: 1,
        title: "alg1 reaches the extensive-form optimum (expectation, 20 random lattices, <= 200 iterations, < 60 s); alg2 replays alg1's trace",
        pass: ok == total && secs < 60.0 && trace_diffs.is_empty(),
        detail: format!(
            "{ok}/{total} converged, slowest at iteration {slowest}, max final gap {worst:.2e}, {secs:.1} s; alg2 trace differs on {trace_diffs:?} {}",
            failures.join("; ")
        ),
    });

    // 2. risk-averse convergence
    let (ok, total, worst, slowest, failures) =
        convergence_family(&mut family_runs, 101..=120, |s| Some(risk_rotation(s as usize)), 500);
    lines.push(Line {
        id: 2,
        title: "alg1 reaches the nested-decomposition value (CVaR and mixtures, 20 random lattices, <= 500 iterations)",
        pass: ok == total,
        detail: format!("{ok}/{total} converged, slowest at iteration {slowest}, max final gap {worst:.2e} {}", failures.join("; ")),
    });

    // 7. feasibility cuts
    let p7 = instance("no_complete_recourse");
    let reference7 = extensive_form_value(&p7).map(|r| r.value).unwrap_or(f64::NAN);
    let r7 = run(&p7, &config(Algorithm::Alg2, 50, 7)).unwrap();
    let first_feas = r7.cut_records.iter().find(|c| c.kind == CutKind::Feasibility).cloned();
    let coef_ok = first_feas
        .as_ref()
        .is_some_and(|c| (c.beta[0] + 1.0).abs() <= 1e-9 && (c.theta + 1.0).abs() <= 1e-9);
    let gap7 = (r7.lower_bound.unwrap_or(f64::NAN) - reference7).abs();
    let pinf = instance("infeasible");
    let rinf = run(&pinf, &config(Algorithm::Alg2, 10, 7)).unwrap();
    let infeasible_ok = rinf.status == RunStatus::Infeasible && rinf.iterations == 1;
    let dedup_ok = {
        let mut seen = HashSet::new();
        r7.cut_records
            .iter()
            .filter(|c| c.kind == CutKind::Feasibility)
            .all(|c| seen.insert(format!("{}|{:?}|{:?}", c.stage, c.theta.to_bits(), c.beta.iter().map(|b| b.to_bits()).collect::<Vec<_>>())))
    };
    lines.push(Line {
        id: 7,
        title: "alg2 builds the cut x1 >= 1, converges on the non-RCR instance, reports infeasibility at k = 1",
        pass: coef_ok && gap7 <= GAP_TOL && infeasible_ok && dedup_ok,
        detail: format!(
            "first cut {:?}, gap {gap7:.2e}, infeasible instance: {} at k={}, duplicate-free: {dedup_ok}",
            first_feas.map(|c| (c.beta, c.theta)),
            rinf.status.as_str(),
            rinf.iterations
        ),
    });
    other_runs.push(Kept { label: "no_complete_recourse".into(), problem: p7, result: r7 });

    // 8. per-node cuts on trees
    let mut tree_failures = Vec::new();
    let mut tree_worst = 0.0f64;
    let mut trees = vec![("inventory_tree".to_string(), instance("inventory_tree"))];
    for seed in 0..3u64 {
        let mut eps = rng(800 + seed);
        let p = random_tree(800 + seed, Shape { horizon: 3, branches: 2, dim: 1 + seed as usize % 2 }, |_| {
            Some(RiskSpec::Cvar { epsilon: [0.2, 0.4, 0.6, 0.8][eps.gen_range(0..4)] })
        });
        trees.push((format!("random tree {seed}"), p));
    }
    for (label, p) in trees {
        let reference = match exact_nested_decomposition(&p) {
            Ok(r) => r.value,
            Err(e) => {
                tree_failures.push(format!("{label}: oracle failed: {e}"));
                continue;
            }
        };
        match run(&p, &config(Algorithm::Alg3, 500, 8)) {
            Ok(r) => {
                let gap = (r.lower_bound.unwrap() - reference).abs();
                tree_worst = tree_worst.max(gap);
                if first_hit(&r, reference).is_none() || gap > GAP_TOL {
                    tree_failures.push(format!("{label}: gap {gap:.2e}"));
                }
                other_runs.push(Kept { label, problem: p, result: r });
            }
            Err(e) => tree_failures.push(format!("{label}: {e}")),
        }
    }
    let mut equiv_worst = 0.0f64;
    for seed in 0..3u64 {
        let risk = [None, Some(RiskSpec::Cvar { epsilon: 0.5 }), Some(risk_rotation(2))][seed as usize].clone();
        let lattice = random_lattice(850 + seed, Shape { horizon: 2, branches: 3, dim: 2 }, risk);
        let tree = lattice_as_tree(&lattice);
        let a = run(&lattice, &config(Algorithm::Alg1, 60, 42)).unwrap();
        let b = run(&tree, &config(Algorithm::Alg3, 60, 42)).unwrap();
        if a.reports.len() != b.reports.len() {
            tree_failures.push(format!("equivalence {seed}: different lengths"));
        }
        for (x, y) in a.reports.iter().zip(&b.reports) {
            equiv_worst = equiv_worst.max((x.lower_bound - y.lower_bound).abs());
        }
        other_runs.push(Kept { label: format!("equivalent lattice {seed}"), problem: lattice, result: a });
        other_runs.push(Kept { label: format!("equivalent tree {seed}"), problem: tree, result: b });
    }
    lines.push(Line {
        id: 8,
        title: "alg3 reaches the tree nested-decomposition value; matches alg1 on lattice-equivalent trees",
        pass: tree_failures.is_empty() && equiv_worst <= 1e-9,
        detail: format!("max gap {tree_worst:.2e}, max lattice/tree difference {equiv_worst:.2e} {}", tree_failures.join("; ")),
    });

    // 3. cut validity
    let mut r = rng(3);
    let mut worst = f64::NEG_INFINITY;
    let mut errors = Vec::new();
    for kept in family_runs.iter().chain(&other_runs) {
        match cut_validity(kept, &mut r) {
            Ok(w) => worst = worst.max(w),
            Err(e) => errors.push(format!("{}: {e}", kept.label)),
        }
    }
    lines.push(Line {
        id: 3,
        title: "every optimality cut under-estimates the true recourse value at 50 random points",
        pass: errors.is_empty() && worst <= VALIDITY_TOL,
        detail: format!("{} runs, max excess {worst:.2e} {}", family_runs.len() + other_runs.len(), errors.join("; ")),
    });

    // 4. tightness of new cuts at their anchors
    let fired: usize = family_runs.iter().chain(&other_runs).map(|k| k.result.anchor_violations).sum();
    let runs_checked = family_runs.len() + other_runs.len();
    lines.push(Line {
        id: 4,
        title: "each new cut is tight at its anchor (tolerance 1e-9)",
        pass: fired == 0,
        detail: format!("{fired} violations over {runs_checked} runs"),
    });

    // 5. subgradient inequality at perturbed histories, norm bound
    let mut r = rng(5);
    let pairs: Vec<(usize, usize)> = family_runs
        .iter()
        .enumerate()
        .flat_map(|(i, k)| (0..k.result.subproblems.len()).map(move |j| (i, j)))
        .collect();
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let samples = pairs.len().min(1000);
    for _ in 0..samples {
        let (i, j) = pairs[r.gen_range(0..pairs.len())];
        let kept = &family_runs[i];
        let (v, g) = subgradient_check(kept, &kept.result.subproblems[j], &mut r);
        violations += v;
        worst_gap = worst_gap.max(g);
    }
    let bound = subgradient_bound(3.0, 0.0, 1.0).unwrap();
    let news = instance("newsvendor");
    let rn = run(&news, &RunConfig { subgradient_limit: Some(bound), ..config(Algorithm::Alg1, 20, 5) }).unwrap();
    let max_norm = rn
        .subproblems
        .iter()
        .map(|s| s.s.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    lines.push(Line {
        id: 5,
        title: "subgradients satisfy the value-function inequality at 20 perturbed histories; norm bound holds",
        pass: samples >= 1000 && violations == 0 && rn.pi_bound_violations == 0 && max_norm <= bound + 1e-9,
        detail: format!(
            "{samples} pairs, {violations} violations, worst gap {worst_gap:.2e}; max |s| {max_norm} vs bound {bound}"
        ),
    });

    // 6. CVaR duality
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = r.gen_range(1..=8);
        let values: Vec<f64> = (0..m).map(|_| r.gen_range(-10.0..10.0)).collect();
        let w: Vec<f64> = (0..m).map(|_| r.gen_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / s).collect();
        let eps = r.gen_range(0.01..=1.0);
        let analytic = risk_value_and_density(&values, &probs, &RiskSpec::Cvar { epsilon: eps }).unwrap().value;
        let direct = cvar_by_minimization(&values, &probs, eps);
        worst = worst.max((analytic - direct).abs() / direct.abs().max(1.0));
    }
    lines.push(Line {
        id: 6,
        title: "analytic CVaR density value equals the minimization formula (1000 triples)",
        pass: worst <= 1e-9,
        detail: format!("max relative difference {worst:.2e}"),
    });

    // 9. monotone lower bounds
    let bad: Vec<&str> = family_runs
        .iter()
        .chain(&other_runs)
        .filter(|k| !is_monotone(&k.lower_bounds()))
        .map(|k| k.label.as_str())
        .collect();
    lines.push(Line {
        id: 9,
        title: "lower bounds are nondecreasing in every run",
        pass: bad.is_empty(),
        detail: format!("{} runs, non-monotone: {bad:?}", family_runs.len() + other_runs.len()),
    });

    // 10. determinism
    let mut det_failures = Vec::new();
    let det_cases = vec![
        ("random lattice", random_lattice(1001, Shape { horizon: 4, branches: 3, dim: 2 }, Some(risk_rotation(3))), Algorithm::Alg1),
        ("no_complete_recourse", instance("no_complete_recourse"), Algorithm::Alg2),
        ("inventory_tree", instance("inventory_tree"), Algorithm::Alg3),
    ];
    for (label, p, alg) in &det_cases {
        let base = RunConfig { threads: 4, ..config(*alg, 40, 99) };
        let a = logs(p, &run(p, &base).unwrap());
        let b = logs(p, &run(p, &base).unwrap());
        let c = logs(p, &run(p, &RunConfig { threads: 1, ..base.clone() }).unwrap());
        if a != b || a != c {
            det_failures.push(*label);
        }
    }
    lines.push(Line {
        id: 10,
        title: "same seed gives byte-identical logs and cut dumps, with 4 threads and with 1",
        pass: det_failures.is_empty(),
        detail: format!("{} cases, differing: {det_failures:?}", det_cases.len()),
    });

    lines.sort_by_key(|l| l.id);
    let mut all = true;
    for l in &lines {
        all &= l.pass;
        println!("criterion {:>2} [PRIMARY] {}: {} ({})", l.id, l.title, if l.pass { "PASS" } else { "FAIL" }, l.detail.trim());
    }
    println!("acceptance: {} in {:.1} s", if all { "all criteria passed" } else { "FAILED" }, started.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
