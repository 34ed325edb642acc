//! `riskdp`: solve, validate and cross-check multistage stochastic programs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riskdp::cuts::{fmt_f64, read_cut_dump, write_cut_dump, CutKind, CutRecord};
use riskdp::engine::{write_iteration_log, EngineError};
use riskdp::model::{Form, Topology};
use riskdp::oracle::{all_expectation, exact_nested_decomposition, extensive_form_value, OracleError, RecourseOracle};
use riskdp::{run, validate_problem, Algorithm, CutTiming, OracleCheck, Problem, RiskSpec, RunConfig, RunStatus};

const EXIT_OK: u8 = 0;
const EXIT_INFEASIBLE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "riskdp", version, about = "Risk-averse sampled decomposition for multistage stochastic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a decomposition algorithm and write its logs.
    Solve(SolveArgs),
    /// Check a problem file against the model invariants.
    Validate {
        input: PathBuf,
    },
    /// Solve exactly with a reference method.
    Oracle {
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long, value_parser = parse_risk)]
        risk_override: Option<RiskSpec>,
        /// Also write oracle.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a cut dump with exact recourse values at random points.
    CheckCuts {
        input: PathBuf,
        cuts: PathBuf,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, value_parser = parse_risk)]
        risk_override: Option<RiskSpec>,
    },
}

#[derive(Args, Debug)]
struct SolveArgs {
    input: PathBuf,
    /// alg1 | alg2 | alg3; defaults to alg2 for lattices and alg3 for trees.
    #[arg(long)]
    alg: Option<Algorithm>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stall test window; 0 disables it.
    #[arg(long, default_value_t = 10)]
    stall_window: usize,
    #[arg(long, default_value_t = 1e-9)]
    stall_tol: f64,
    /// backward | forward
    #[arg(long, default_value = "backward")]
    cut_timing: CutTiming,
    /// off | final | every:K
    #[arg(long, default_value = "off")]
    oracle_check: OracleCheck,
    #[arg(long, default_value = "riskdp-out")]
    out: PathBuf,
    /// Risk measure for every stage or node, e.g. cvar:0.1 or mixture:0.5:0.2.
    #[arg(long, value_parser = parse_risk)]
    risk_override: Option<RiskSpec>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write zero wall times so logs are byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    ExtensiveForm,
    Nested,
}

fn parse_risk(s: &str) -> Result<RiskSpec, String> {
    RiskSpec::parse_short(s).map_err(|e| e.to_string())
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
struct Exit {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Exit {
    move |error| Exit { code, error }
}

fn load(path: &Path, risk: Option<RiskSpec>) -> Result<Problem> {
    let p = Problem::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match risk {
        Some(spec) => p.with_risk_override(spec),
        None => p,
    })
}

fn json_num(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        "null".into()
    }
}

fn json_vec(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|&x| json_num(x)).collect::<Vec<_>>().join(", "))
}

fn json_object(fields: &[(&str, String)]) -> String {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("  \"{k}\": {v}")).collect();
    format!("{{\n{}\n}}\n", body.join(",\n"))
}

fn engine_exit(e: EngineError) -> Exit {
    let code = match e {
        EngineError::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    };
    Exit { code, error: e.into() }
}

fn solve(args: SolveArgs) -> Result<u8, Exit> {
    let problem = load(&args.input, args.risk_override).map_err(fail(EXIT_FAILURE))?;
    let algorithm = args.alg.unwrap_or(match problem.form {
        Form::Lattice => Algorithm::Alg2,
        Form::Tree => Algorithm::Alg3,
    });
    let cfg = RunConfig {
        algorithm,
        max_iters: args.iters,
        seed: args.seed,
        stall_window: args.stall_window,
        stall_tol: args.stall_tol,
        cut_timing: args.cut_timing,
        oracle_check: args.oracle_check,
        threads: args.threads,
        record_timing: !args.no_timing,
        ..RunConfig::default()
    };
    log::info!("solving {} with {algorithm}", args.input.display());
    let result = run(&problem, &cfg).map_err(engine_exit)?;
    for (k, gap) in &result.oracle_gaps {
        log::info!("iteration {k}: gap to reference value {gap}");
    }

    let write = || -> Result<String> {
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        let log_path = args.out.join("iterations.csv");
        write_iteration_log(BufWriter::new(File::create(&log_path)?), problem.dim, &result.reports)
            .with_context(|| format!("writing {}", log_path.display()))?;
        let cut_path = args.out.join("cuts.csv");
        write_cut_dump(BufWriter::new(File::create(&cut_path)?), &result.cut_records)
            .with_context(|| format!("writing {}", cut_path.display()))?;
        let summary = json_object(&[
            ("status", format!("\"{}\"", result.status.as_str())),
            ("lower_bound", result.lower_bound.map_or("null".into(), json_num)),
            ("x1", result.x1.as_deref().map_or("null".into(), json_vec)),
            ("iters", result.iterations.to_string()),
            ("seed", result.seed.to_string()),
        ]);
        fs::write(args.out.join("summary.json"), &summary).context("writing summary.json")?;
        Ok(summary)
    };
    let summary = write().map_err(fail(EXIT_FAILURE))?;
    print!("{summary}");
    Ok(if result.status == RunStatus::Infeasible { EXIT_INFEASIBLE } else { EXIT_OK })
}

fn validate(input: &Path) -> Result<u8, Exit> {
    let problem = load(input, None).map_err(fail(EXIT_FAILURE))?;
    let report = validate_problem(&problem);
    if report.is_valid() {
        println!("{}: valid", input.display());
        return Ok(EXIT_OK);
    }
    for v in &report.violations {
        println!("{}: {}", v.location, v.message);
    }
    Err(Exit { code: EXIT_FAILURE, error: anyhow!("{} violation(s) in {}", report.violations.len(), input.display()) })
}

fn oracle(input: &Path, method: Option<Method>, risk: Option<RiskSpec>, out: Option<&Path>) -> Result<u8, Exit> {
    let problem = load(input, risk).map_err(fail(EXIT_FAILURE))?;
    let method = method.unwrap_or(if all_expectation(&problem) { Method::ExtensiveForm } else { Method::Nested });
    let outcome = match method {
        Method::ExtensiveForm => extensive_form_value(&problem),
        Method::Nested => exact_nested_decomposition(&problem),
    };
    let (report, code) = match outcome {
        Ok(r) => (
            json_object(&[
                ("status", "\"optimal\"".into()),
                ("method", format!("\"{}\"", r.method.as_str())),
                ("value", json_num(r.value)),
                ("x1", json_vec(&r.x1)),
                ("size", r.size.to_string()),
            ]),
            EXIT_OK,
        ),
        Err(OracleError::Infeasible) => (json_object(&[("status", "\"infeasible\"".into())]), EXIT_INFEASIBLE),
        Err(e @ OracleError::NotExpectation) => return Err(Exit { code: EXIT_USAGE, error: e.into() }),
        Err(e) => return Err(Exit { code: EXIT_FAILURE, error: e.into() }),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .and_then(|_| fs::write(dir.join("oracle.json"), &report))
            .with_context(|| format!("writing {}", dir.join("oracle.json").display()))
            .map_err(fail(EXIT_FAILURE))?;
    }
    print!("{report}");
    Ok(code)
}

struct CheckReport {
    checked: usize,
    skipped: usize,
    violations: usize,
    worst_excess: f64,
}

fn check_cuts(problem: &Problem, records: &[CutRecord], points: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    let topo = Topology::new(problem)?;
    let mut by_slot: BTreeMap<usize, Vec<&CutRecord>> = BTreeMap::new();
    for r in records {
        let slot = topo
            .slot_from_label(r.stage)
            .ok_or_else(|| anyhow!("cut dump names unknown stage or node {}", r.stage))?;
        let width = topo.slot_stage(slot) * topo.dim();
        if r.beta.len() != width || r.anchor.len() != width {
            bail!("cut on {} has {} coefficients, expected {width}", r.stage, r.beta.len());
        }
        by_slot.entry(slot).or_default().push(r);
    }
    let slots: Vec<usize> = by_slot.keys().copied().collect();
    let mut oracle = RecourseOracle::new(problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport { checked: 0, skipped: 0, violations: 0, worst_excess: f64::NEG_INFINITY };
    if slots.is_empty() {
        return Ok(report);
    }
    for i in 0..points {
        let slot = slots[i % slots.len()];
        let owner = topo.slot_owner(slot);
        let (lo, hi) = topo.history_box(owner);
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| if b > a { rng.gen_range(a..=b) } else { a }).collect();
        let truth = oracle.value(owner, &x)?;
        if truth.infeasible {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let mut excess = f64::NEG_INFINITY;
        for c in &by_slot[&slot] {
            let e = match c.kind {
                CutKind::Optimality => c.to_optimality().eval(&x) - truth.value,
                CutKind::Feasibility => c.beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>() - c.theta,
            };
            excess = excess.max(e);
        }
        report.worst_excess = report.worst_excess.max(excess);
        if excess > tol {
            log::warn!("cut on {} exceeds the recourse value by {excess} at {x:?}", topo.slot_label(slot));
            report.violations += 1;
        }
    }
    Ok(report)
}

fn check_cuts_cmd(input: &Path, cuts: &Path, points: usize, seed: u64, tol: f64, risk: Option<RiskSpec>) -> Result<u8, Exit> {
    let problem = load(input, risk).map_err(fail(EXIT_FAILURE))?;
    let records = File::open(cuts)
        .map_err(anyhow::Error::from)
        .and_then(|f| read_cut_dump(f).map_err(Into::into))
        .with_context(|| format!("reading {}", cuts.display()))
        .map_err(fail(EXIT_FAILURE))?;
    let report = check_cuts(&problem, &records, points, seed, tol).map_err(fail(EXIT_FAILURE))?;
    print!(
        "{}",
        json_object(&[
            ("cuts", records.len().to_string()),
            ("checked", report.checked.to_string()),
            ("skipped_infeasible", report.skipped.to_string()),
            ("violations", report.violations.to_string()),
            ("worst_excess", json_num(report.worst_excess)),
        ])
    );
    Ok(if report.violations == 0 { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn dispatch(cli: Cli) -> Result<u8, Exit> {
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Validate { input } => validate(&input),
        Command::Oracle { input, method, risk_override, out } => oracle(&input, method, risk_override, out.as_deref()),
        Command::CheckCuts { input, cuts, points, seed, tol, risk_override } => {
            check_cuts_cmd(&input, &cuts, points, seed, tol, risk_override)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RISKDP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
