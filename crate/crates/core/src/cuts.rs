//! Cut pools: affine minorants of recourse functions (optimality cuts) and
//! affine restrictions of the history set (feasibility cuts).

use std::io::{Read, Write};

use thiserror::Error;

use crate::risk::{risk_value_and_density, RiskError, RiskSpec};
use crate::scalar::{dot, Scalar};

/// Minimum phase-I value for which a feasibility cut is built.
pub const PHASE_ONE_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("expected {expected} child results, got {got}")]
    IncompleteChildren { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("phase-I value {0} is below the infeasibility threshold; no cut to build")]
    NotViolated(f64),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("malformed cut dump: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `Q(x) >= theta + <beta, x - anchor>`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityCut<T> {
    pub theta: T,
    pub beta: Vec<T>,
    pub anchor: Vec<T>,
    pub iteration: usize,
}

impl<T: Scalar> OptimalityCut<T> {
    pub fn eval(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.beta.len());
        let mut v = self.theta;
        for i in 0..x.len() {
            v += self.beta[i] * (x[i] - self.anchor[i]);
        }
        v
    }

    /// The cut written as `beta . x + intercept`.
    pub fn intercept(&self) -> T {
        self.theta - dot(&self.beta, &self.anchor)
    }
}

/// `<beta, x> <= theta` for every history with a feasible continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCut<T> {
    pub theta: T,
    pub beta: Vec<T>,
    /// History that triggered the cut (violates it by the phase-I value).
    pub anchor: Vec<T>,
    pub iteration: usize,
}

impl<T: Scalar> FeasibilityCut<T> {
    /// Positive when `x` is cut off.
    pub fn violation(&self, x: &[T]) -> T {
        dot(&self.beta, x) - self.theta
    }
}

/// Append-only collection of cuts on one recourse function.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPool<T> {
    optimality: Vec<OptimalityCut<T>>,
    feasibility: Vec<FeasibilityCut<T>>,
    generation: usize,
}

impl<T> Default for CutPool<T> {
    fn default() -> Self {
        Self { optimality: Vec::new(), feasibility: Vec::new(), generation: 0 }
    }
}

/// Prefix lengths of a pool; a pool only grows, so a view taken at some
/// generation keeps describing the same cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolView {
    pub optimality: usize,
    pub feasibility: usize,
}

impl<T: Scalar> CutPool<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn optimality(&self) -> &[OptimalityCut<T>] {
        &self.optimality
    }

    pub fn feasibility(&self) -> &[FeasibilityCut<T>] {
        &self.feasibility
    }

    /// Number of appends so far.
    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn view(&self) -> PoolView {
        PoolView { optimality: self.optimality.len(), feasibility: self.feasibility.len() }
    }

    pub fn push_optimality(&mut self, cut: OptimalityCut<T>) {
        self.optimality.push(cut);
        self.generation += 1;
    }

    pub fn push_feasibility(&mut self, cut: FeasibilityCut<T>) {
        self.feasibility.push(cut);
        self.generation += 1;
    }

    /// Maximum over the optimality cuts; `-inf` for an empty pool.
    pub fn evaluate(&self, x: &[T]) -> T {
        evaluate_cuts(&self.optimality, x)
    }

    pub fn max_beta_norm(&self) -> T {
        self.optimality.iter().map(|c| crate::scalar::norm2(&c.beta)).fold(T::zero(), T::max)
    }
}

pub fn evaluate_cuts<T: Scalar>(cuts: &[OptimalityCut<T>], x: &[T]) -> T {
    cuts.iter().map(|c| c.eval(x)).fold(T::neg_infinity(), T::max)
}

pub fn evaluate_pool<T: Scalar>(pool: &CutPool<T>, x: &[T]) -> T {
    pool.evaluate(x)
}

/// Risk-weighted aggregation of the children's values and subgradients at a
/// common anchor history.
pub fn build_optimality_cut<T: Scalar>(
    child_values: &[T],
    child_pis: &[Vec<T>],
    probs: &[T],
    risk: &RiskSpec,
    anchor: &[T],
    iteration: usize,
) -> Result<OptimalityCut<T>, CutError> {
    let m = probs.len();
    if child_values.len() != m || child_pis.len() != m {
        return Err(CutError::IncompleteChildren { expected: m, got: child_values.len().min(child_pis.len()) });
    }
    if let Some(bad) = child_pis.iter().find(|pi| pi.len() != anchor.len()) {
        return Err(CutError::Dimension(format!(
            "child subgradient has length {}, anchor has {}",
            bad.len(),
            anchor.len()
        )));
    }
    let eval = risk_value_and_density(child_values, probs, risk)?;
    let mut beta = vec![T::zero(); anchor.len()];
    let mut theta = T::zero();
    for j in 0..m {
        let w = eval.density[j] * probs[j];
        if w == T::zero() {
            continue;
        }
        theta += w * child_values[j];
        for (b, &p) in beta.iter_mut().zip(&child_pis[j]) {
            *b += w * p;
        }
    }
    Ok(OptimalityCut { theta, beta, anchor: anchor.to_vec(), iteration })
}

/// Cut separating `anchor` from the histories with a feasible continuation,
/// given the phase-I value at `anchor` and a subgradient `s` of the phase-I
/// value function there.
pub fn build_feasibility_cut<T: Scalar>(
    phase1_value: T,
    s: &[T],
    anchor: &[T],
    iteration: usize,
) -> Result<FeasibilityCut<T>, CutError> {
    if !(phase1_value > T::lit(PHASE_ONE_THRESHOLD)) {
        return Err(CutError::NotViolated(phase1_value.to_f64_lossy()));
    }
    if s.len() != anchor.len() {
        return Err(CutError::Dimension(format!("subgradient length {} vs anchor {}", s.len(), anchor.len())));
    }
    let theta = dot(s, anchor) - phase1_value;
    Ok(FeasibilityCut { theta, beta: s.to_vec(), anchor: anchor.to_vec(), iteration })
}

/// Whether `pool` evaluated at the anchor of the cut just appended matches
/// that cut's theta.
pub fn anchor_is_tight<T: Scalar>(pool: &CutPool<T>, cut: &OptimalityCut<T>, tol: f64) -> bool {
    let v = pool.evaluate(&cut.anchor);
    (v - cut.theta).abs() <= T::lit(tol) * T::one().max(cut.theta.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    Optimality,
    Feasibility,
}

impl CutKind {
    pub fn tag(self) -> &'static str {
        match self {
            CutKind::Optimality => "opt",
            CutKind::Feasibility => "feas",
        }
    }
}

/// One line of a cut dump.
#[derive(Debug, Clone, PartialEq)]
pub struct CutRecord {
    pub kind: CutKind,
    /// Stage (lattice) or node id (tree) owning the pool.
    pub stage: i64,
    pub iteration: usize,
    pub theta: f64,
    pub beta: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl CutRecord {
    pub fn from_optimality<T: Scalar>(stage: i64, c: &OptimalityCut<T>) -> Self {
        Self {
            kind: CutKind::Optimality,
            stage,
            iteration: c.iteration,
            theta: c.theta.to_f64_lossy(),
            beta: c.beta.iter().map(|v| v.to_f64_lossy()).collect(),
            anchor: c.anchor.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn from_feasibility<T: Scalar>(stage: i64, c: &FeasibilityCut<T>) -> Self {
        Self {
            kind: CutKind::Feasibility,
            stage,
            iteration: c.iteration,
            theta: c.theta.to_f64_lossy(),
            beta: c.beta.iter().map(|v| v.to_f64_lossy()).collect(),
            anchor: c.anchor.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn to_optimality(&self) -> OptimalityCut<f64> {
        OptimalityCut { theta: self.theta, beta: self.beta.clone(), anchor: self.anchor.clone(), iteration: self.iteration }
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `kind,stage,iter,theta,beta...,anchor...` lines (no header; the
/// number of columns varies with the stage).
pub fn write_cut_dump<W: Write>(w: W, records: &[CutRecord]) -> Result<(), CutError> {
    let mut out = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(w);
    for r in records {
        let mut row = vec![r.kind.tag().to_string(), r.stage.to_string(), r.iteration.to_string(), fmt_f64(r.theta)];
        row.extend(r.beta.iter().map(|&v| fmt_f64(v)));
        row.extend(r.anchor.iter().map(|&v| fmt_f64(v)));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_cut_dump<R: Read>(r: R) -> Result<Vec<CutRecord>, CutError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(r);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| CutError::Parse(format!("line {}: {m}", line + 1));
        if rec.len() < 4 || (rec.len() - 4) % 2 != 0 {
            return Err(bad("wrong number of fields"));
        }
        let kind = match &rec[0] {
            "opt" => CutKind::Optimality,
            "feas" => CutKind::Feasibility,
            _ => return Err(bad("unknown cut kind")),
        };
        let stage = rec[1].parse().map_err(|_| bad("bad stage"))?;
        let iteration = rec[2].parse().map_err(|_| bad("bad iteration"))?;
        let nums: Vec<f64> = rec.iter().skip(3).map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad("bad number"))?;
        let len = (nums.len() - 1) / 2;
        out.push(CutRecord {
            kind,
            stage,
            iteration,
            theta: nums[0],
            beta: nums[1..1 + len].to_vec(),
            anchor: nums[1 + len..].to_vec(),
        });
    }
    Ok(out)
}
