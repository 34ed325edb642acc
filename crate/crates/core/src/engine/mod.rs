//! Sampled decomposition drivers.
//!
//! One driver covers the three algorithm variants. Each iteration samples a
//! path, walks it forward (with phase-I checks and backtracking under
//! [`Algorithm::Alg2`]), then builds one optimality cut per path node from
//! the solutions of all of that node's children. Pools are per stage for
//! lattice problems and per node for trees.

pub mod node;
pub mod sampler;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::cuts::{
    anchor_is_tight, build_feasibility_cut, build_optimality_cut, fmt_f64, CutError, CutPool, CutRecord, PoolView,
    PHASE_ONE_THRESHOLD,
};
use crate::lp::LpError;
use crate::model::{Form, ModelError, NodeKey, Problem, Topology};
use crate::valuefn::ValueFnError;

pub use node::{phase_one, solve_node, NodeSolution, PhaseOneSolution};
pub use sampler::PathSampler;

/// Tolerance of the check that a new cut is tight at its anchor.
pub const ANCHOR_TOL: f64 = 1e-9;
/// Iterations whose subgradient norms set the growth baseline.
const PI_WARMUP: usize = 5;
const PI_GROWTH: f64 = 10.0;
const MAX_BACKTRACKS: usize = 10_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    ValueFn(#[from] ValueFnError),
    #[error("stage {stage} subproblem at {node} is infeasible; the problem does not have relatively complete recourse (try alg2)")]
    NoRecourse { stage: usize, node: String },
    #[error("stage {stage} subproblem is unbounded; check lower_value_bound")]
    Unbounded { stage: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("reference solve failed: {0}")]
    Oracle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Shared per-stage cuts, relatively complete recourse assumed.
    Alg1,
    /// As `Alg1`, plus feasibility cuts and backtracking.
    Alg2,
    /// Per-node cuts on an explicit tree.
    Alg3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutTiming {
    /// Cuts built from the last stage back to the first.
    Backward,
    /// Cuts built from the first stage on, each against last iteration's
    /// pool of the following stage.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleCheck {
    Off,
    Final,
    Every(usize),
}

fn bad_value(kind: &str, s: &str) -> String {
    format!("unknown {kind} `{s}`")
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alg1" => Ok(Self::Alg1),
            "alg2" => Ok(Self::Alg2),
            "alg3" => Ok(Self::Alg3),
            _ => Err(bad_value("algorithm", s)),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alg1 => "alg1",
            Self::Alg2 => "alg2",
            Self::Alg3 => "alg3",
        })
    }
}

impl FromStr for CutTiming {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "backward" => Ok(Self::Backward),
            "forward" => Ok(Self::Forward),
            _ => Err(bad_value("cut timing", s)),
        }
    }
}

impl FromStr for OracleCheck {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(Self::Off),
            "final" => Ok(Self::Final),
            _ => s
                .strip_prefix("every:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(Self::Every)
                .ok_or_else(|| bad_value("oracle check", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once the lower bound gained at most `stall_tol` over the last
    /// `stall_window` iterations; `0` disables the test.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub cut_timing: CutTiming,
    pub oracle_check: OracleCheck,
    /// Worker threads for child solves; `1` solves sequentially.
    pub threads: usize,
    /// Record wall-clock time per iteration (zero otherwise, which keeps logs
    /// byte-identical across runs).
    pub record_timing: bool,
    /// Known bound on subgradient norms; exceedances are counted.
    pub subgradient_limit: Option<f64>,
    /// Keep every child solve for later inspection.
    pub record_subproblems: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Alg1,
            max_iters: 200,
            seed: 0,
            stall_window: 10,
            stall_tol: 1e-9,
            cut_timing: CutTiming::Backward,
            oracle_check: OracleCheck::Off,
            threads: 1,
            record_timing: true,
            subgradient_limit: None,
            record_subproblems: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_iters == 0 {
            return Err(EngineError::Config("max_iters must be at least 1".into()));
        }
        if !(self.stall_tol >= 0.0) {
            return Err(EngineError::Config("stall_tol must be nonnegative".into()));
        }
        if self.threads == 0 {
            return Err(EngineError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub k: usize,
    pub path: Vec<NodeKey>,
    /// First-stage value with the pools as they stand after this iteration.
    pub lower_bound: f64,
    pub x1: Vec<f64>,
    pub cuts_opt_added: usize,
    pub cuts_feas_added: usize,
    pub backtracks: usize,
    pub wall_ms: u128,
    /// Largest subgradient norm among this iteration's child solves.
    pub max_pi_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    ConvergedByStall,
    IterLimit,
    Infeasible,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConvergedByStall => "converged_by_stall",
            Self::IterLimit => "iter_limit",
            Self::Infeasible => "infeasible",
        }
    }
}

/// A child solve used to build a cut.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemRecord {
    pub key: NodeKey,
    pub history: Vec<f64>,
    pub value: f64,
    pub s: Vec<f64>,
    /// Pool prefix of the child's cost-to-go at solve time (`None` at leaves).
    pub view: Option<PoolView>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: RunStatus,
    pub seed: u64,
    pub iterations: usize,
    pub reports: Vec<IterationReport>,
    pub lower_bound: Option<f64>,
    pub x1: Option<Vec<f64>>,
    pub pools: Vec<CutPool<f64>>,
    /// Every cut in the order it was added.
    pub cut_records: Vec<CutRecord>,
    pub anchor_violations: usize,
    pub pi_bound_violations: usize,
    pub subproblems: Vec<SubproblemRecord>,
    /// `(k, reference value - lower bound)` where an oracle check ran.
    pub oracle_gaps: Vec<(usize, f64)>,
}

pub enum Outcome {
    Report(IterationReport),
    Infeasible { k: usize },
}

/// Iteration state: pools, sampler and diagnostics.
pub struct Engine<'p> {
    topo: Topology<'p>,
    cfg: RunConfig,
    pools: Vec<CutPool<f64>>,
    sampler: PathSampler,
    threads: Option<rayon::ThreadPool>,
    k: usize,
    cut_records: Vec<CutRecord>,
    anchor_violations: usize,
    pi_bound_violations: usize,
    subproblems: Vec<SubproblemRecord>,
}

impl<'p> Engine<'p> {
    pub fn new(problem: &'p Problem, cfg: RunConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let topo = Topology::new(problem)?;
        match (cfg.algorithm, problem.form) {
            (Algorithm::Alg1 | Algorithm::Alg2, Form::Tree) => {
                return Err(EngineError::Config(format!("{} needs a lattice problem; use alg3 for trees", cfg.algorithm)))
            }
            (Algorithm::Alg3, Form::Lattice) => {
                return Err(EngineError::Config("alg3 needs a tree problem".into()))
            }
            _ => {}
        }
        let threads = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| EngineError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        let pools = vec![CutPool::new(); topo.num_pool_slots()];
        Ok(Self {
            topo,
            sampler: PathSampler::new(cfg.seed),
            cfg,
            pools,
            threads,
            k: 0,
            cut_records: Vec::new(),
            anchor_violations: 0,
            pi_bound_violations: 0,
            subproblems: Vec::new(),
        })
    }

    pub fn topology(&self) -> &Topology<'p> {
        &self.topo
    }

    pub fn pools(&self) -> &[CutPool<f64>] {
        &self.pools
    }

    fn map_children<R, F>(&self, keys: &[NodeKey], f: F) -> Result<Vec<R>, EngineError>
    where
        R: Send,
        F: Fn(NodeKey) -> Result<R, EngineError> + Sync + Send,
    {
        match &self.threads {
            Some(tp) => tp.install(|| keys.par_iter().map(|&k| f(k)).collect()),
            None => keys.iter().map(|&k| f(k)).collect(),
        }
    }

    /// First-stage value and decision under the current pools.
    pub fn first_stage(&self) -> Result<NodeSolution, EngineError> {
        solve_node(&self.topo, &self.pools, self.topo.first_stage(), &[], None)
    }

    /// Forward pass; returns the history `x_{1:T-1}` along `path`, or `None`
    /// when the first stage is infeasible.
    fn forward(&mut self, path: &[NodeKey], k: usize, feas_added: &mut usize, backtracks: &mut usize) -> Result<Option<Vec<f64>>, EngineError> {
        let n = self.topo.dim();
        let t_max = self.topo.horizon();
        let mut hist = Vec::with_capacity(t_max * n);
        let mut level = 0;
        loop {
            if self.cfg.algorithm == Algorithm::Alg2 {
                let parent = if level == 0 { NodeKey::Root } else { path[level - 1] };
                let children = self.topo.children(parent);
                let checks = {
                    let (topo, pools, h) = (&self.topo, &self.pools, &hist);
                    self.map_children(&children, |c| phase_one(topo, pools, c, h))?
                };
                let mut worst: Option<&PhaseOneSolution> = None;
                for c in &checks {
                    if c.value > PHASE_ONE_THRESHOLD && worst.is_none_or(|w| c.value > w.value) {
                        worst = Some(c);
                    }
                }
                if let Some(w) = worst {
                    if level == 0 {
                        return Ok(None);
                    }
                    let cut = build_feasibility_cut(w.value, &w.pi.s, &hist, k)?;
                    let slot = self.topo.pool_slot(parent);
                    log::debug!("iteration {k}: feasibility cut on slot {slot} (phase-I value {})", w.value);
                    self.cut_records.push(CutRecord::from_feasibility(self.topo.slot_label(slot), &cut));
                    self.pools[slot].push_feasibility(cut);
                    *feas_added += 1;
                    *backtracks += 1;
                    if *backtracks > MAX_BACKTRACKS {
                        return Err(EngineError::Numerical("backtracking did not terminate".into()));
                    }
                    level -= 1;
                    hist.truncate(level * n);
                    continue;
                }
            }
            if level + 1 >= t_max {
                break;
            }
            let sol = solve_node(&self.topo, &self.pools, path[level], &hist, None)?;
            hist.extend_from_slice(&sol.x);
            level += 1;
        }
        Ok(Some(hist))
    }

    /// Builds and stores the cut on the cost-to-go of `node` at `anchor`.
    fn add_cut(&mut self, node: NodeKey, anchor: &[f64], k: usize, max_pi: &mut f64) -> Result<(), EngineError> {
        let children = self.topo.children(node);
        let sols = {
            let (topo, pools) = (&self.topo, &self.pools);
            self.map_children(&children, |c| solve_node(topo, pools, c, anchor, None))?
        };
        let values: Vec<f64> = sols.iter().map(|s| s.value).collect();
        let pis: Vec<Vec<f64>> = sols.iter().map(|s| s.pi.s.clone()).collect();
        let probs: Vec<f64> = children.iter().map(|&c| self.topo.prob(c)).collect();
        for s in &sols {
            let norm = s.pi.s.iter().map(|v| v * v).sum::<f64>().sqrt();
            *max_pi = max_pi.max(norm);
            if let Some(limit) = self.cfg.subgradient_limit {
                if norm > limit + 1e-9 {
                    self.pi_bound_violations += 1;
                }
            }
        }
        if self.cfg.record_subproblems {
            for s in &sols {
                let view = (!self.topo.is_leaf(s.key)).then(|| self.pools[self.topo.pool_slot(s.key)].view());
                self.subproblems.push(SubproblemRecord {
                    key: s.key,
                    history: anchor.to_vec(),
                    value: s.value,
                    s: s.pi.s.clone(),
                    view,
                });
            }
        }
        let cut = build_optimality_cut(&values, &pis, &probs, self.topo.child_risk(node), anchor, k)?;
        let slot = self.topo.pool_slot(node);
        self.cut_records.push(CutRecord::from_optimality(self.topo.slot_label(slot), &cut));
        self.pools[slot].push_optimality(cut.clone());
        if !anchor_is_tight(&self.pools[slot], &cut, ANCHOR_TOL) {
            self.anchor_violations += 1;
            log::warn!(
                "iteration {k}: pool {slot} evaluates to {} at the new anchor, cut value {}",
                self.pools[slot].evaluate(anchor),
                cut.theta
            );
        }
        Ok(())
    }

    pub fn iterate(&mut self) -> Result<Outcome, EngineError> {
        let started = Instant::now();
        self.k += 1;
        let k = self.k;
        let n = self.topo.dim();
        let t_max = self.topo.horizon();
        let path = self.sampler.sample_path(&self.topo, k);
        let (mut feas_added, mut backtracks) = (0, 0);
        let Some(hist) = self.forward(&path, k, &mut feas_added, &mut backtracks)? else {
            return Ok(Outcome::Infeasible { k });
        };
        let stages: Vec<usize> = match self.cfg.cut_timing {
            CutTiming::Backward => (1..t_max).rev().collect(),
            CutTiming::Forward => (1..t_max).collect(),
        };
        let mut max_pi = 0.0f64;
        for &s in &stages {
            self.add_cut(path[s - 1], &hist[..s * n], k, &mut max_pi)?;
        }
        let first = self.first_stage()?;
        if log::log_enabled!(log::Level::Debug) {
            for (slot, pool) in self.pools.iter().enumerate() {
                log::debug!("iteration {k}: pool {slot} max |beta| = {}", pool.max_beta_norm());
            }
        }
        let report = IterationReport {
            k,
            path,
            lower_bound: first.value,
            x1: first.x,
            cuts_opt_added: stages.len(),
            cuts_feas_added: feas_added,
            backtracks,
            wall_ms: if self.cfg.record_timing { started.elapsed().as_millis() } else { 0 },
            max_pi_norm: max_pi,
        };
        log::info!("iteration {k}: lower bound {}", report.lower_bound);
        Ok(Outcome::Report(report))
    }

    fn into_result(self, status: RunStatus, reports: Vec<IterationReport>, oracle_gaps: Vec<(usize, f64)>) -> RunResult {
        let last = reports.last();
        let feasible = status != RunStatus::Infeasible;
        RunResult {
            status,
            seed: self.cfg.seed,
            iterations: self.k,
            lower_bound: last.filter(|_| feasible).map(|r| r.lower_bound),
            x1: last.filter(|_| feasible).map(|r| r.x1.clone()),
            reports,
            pools: self.pools,
            cut_records: self.cut_records,
            anchor_violations: self.anchor_violations,
            pi_bound_violations: self.pi_bound_violations,
            subproblems: self.subproblems,
            oracle_gaps,
        }
    }
}

/// Runs the configured algorithm until the iteration limit, a stall, or a
/// proof of infeasibility.
pub fn run(problem: &Problem, cfg: &RunConfig) -> Result<RunResult, EngineError> {
    let mut engine = Engine::new(problem, cfg.clone())?;
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut oracle_gaps = Vec::new();
    let mut reference: Option<f64> = None;
    let mut status = RunStatus::IterLimit;
    for i in 0..cfg.max_iters {
        match engine.iterate()? {
            Outcome::Infeasible { k } => {
                log::info!("iteration {k}: first stage infeasible");
                status = RunStatus::Infeasible;
                break;
            }
            Outcome::Report(r) => reports.push(r),
        }
        let k = reports.len();
        if k > PI_WARMUP {
            let early = reports[..PI_WARMUP].iter().map(|r| r.max_pi_norm).fold(0.0, f64::max);
            let now = reports[k - 1].max_pi_norm;
            if now > PI_GROWTH * early.max(f64::MIN_POSITIVE) {
                log::warn!("iteration {k}: subgradient norm {now} exceeds {PI_GROWTH}x the early maximum {early}");
            }
        }
        let stalled = cfg.stall_window > 0
            && k > cfg.stall_window
            && reports[k - 1].lower_bound - reports[k - 1 - cfg.stall_window].lower_bound <= cfg.stall_tol;
        let last = stalled || i + 1 == cfg.max_iters;
        let check = match cfg.oracle_check {
            OracleCheck::Off => false,
            OracleCheck::Final => last,
            OracleCheck::Every(m) => k.is_multiple_of(m) || last,
        };
        if check {
            let v = match reference {
                Some(v) => v,
                None => {
                    let v = crate::oracle::reference_value(problem).map_err(|e| EngineError::Oracle(e.to_string()))?;
                    reference = Some(v);
                    v
                }
            };
            let gap = v - reports[k - 1].lower_bound;
            log::info!("iteration {k}: gap to reference value {gap}");
            oracle_gaps.push((k, gap));
        }
        if stalled {
            status = RunStatus::ConvergedByStall;
            break;
        }
    }
    Ok(engine.into_result(status, reports, oracle_gaps))
}

/// Writes the per-iteration CSV log.
pub fn write_iteration_log<W: Write>(w: W, dim: usize, reports: &[IterationReport]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["k".to_string(), "lower_bound".to_string()];
    header.extend((1..=dim).map(|i| format!("x1_{i}")));
    header.extend(["cuts_opt_added", "cuts_feas_added", "backtracks", "wall_ms"].map(String::from));
    out.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.k.to_string(), fmt_f64(r.lower_bound)];
        row.extend(r.x1.iter().map(|&v| fmt_f64(v)));
        row.extend([
            r.cuts_opt_added.to_string(),
            r.cuts_feas_added.to_string(),
            r.backtracks.to_string(),
            r.wall_ms.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
