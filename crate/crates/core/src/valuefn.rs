//! Stage LPs and subgradients of their optimal value with respect to the
//! decision history.
//!
//! Every constraint row records how its right-hand side moves with the
//! history `x_{1:t-1}`. With the solver's sign conventions (`dual_eq` is the
//! derivative of the value in the equality rhs, `dual_ineq >= 0` the negated
//! derivative in the inequality rhs), a subgradient of the value function is
//!
//! ```text
//! s = d(objective constant)/dh + sum_eq lambda_i * drhs_i/dh - sum_le mu_i * drhs_i/dh
//! ```

use std::collections::HashSet;

use rand::Rng;
use thiserror::Error;

use crate::cuts::{FeasibilityCut, OptimalityCut};
use crate::lp::{LpProblem, LpSolution, LpStatus};
use crate::model::SubproblemData;

/// Inequality multipliers below this are treated as inactive.
pub const DUAL_ZERO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueFnError {
    #[error("cannot take a subgradient of a {0:?} subproblem")]
    NotOptimal(LpStatus),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("upper value {upper} below lower value {lower}")]
    InvertedValues { upper: f64, lower: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Equality,
    Inequality,
    Epigraph,
    OptimalityCut,
    FeasibilityCut,
}

/// An LP posed over the stage decision `x_t` (plus auxiliary columns) for a
/// fixed history, with enough bookkeeping to differentiate its value in the
/// history.
#[derive(Debug, Clone)]
pub struct StageLp {
    pub lp: LpProblem<f64>,
    pub dim: usize,
    /// Column of the cost-to-go epigraph variable.
    pub z: Option<usize>,
    /// Column of the cost epigraph variable (max-of-affine costs only).
    pub w: Option<usize>,
    pub objective_constant: f64,
    pub objective_grad: Vec<f64>,
    pub eq_grad: Vec<Vec<f64>>,
    pub le_grad: Vec<Vec<f64>>,
    pub le_kind: Vec<RowKind>,
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|a| -a).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StageLp {
    fn with_columns(sub: &SubproblemData, extra: usize) -> Self {
        let n = sub.lb.len();
        let mut lp = LpProblem::new(n + extra);
        for j in 0..n {
            lp.set_bounds(j, sub.lb[j], sub.ub[j]);
        }
        Self {
            lp,
            dim: n,
            z: None,
            w: None,
            objective_constant: 0.0,
            objective_grad: vec![0.0; sub.history.len()],
            eq_grad: Vec::new(),
            le_grad: Vec::new(),
            le_kind: Vec::new(),
        }
    }

    fn padded(&self, head: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; self.lp.num_vars()];
        row[..head.len()].copy_from_slice(head);
        row
    }

    fn push_le(&mut self, row: Vec<f64>, rhs: f64, grad: Vec<f64>, kind: RowKind) {
        self.lp.add_le(row, rhs);
        self.le_grad.push(grad);
        self.le_kind.push(kind);
    }

    fn push_feasibility_rows(&mut self, sub: &SubproblemData, feas: &[FeasibilityCut<f64>], slack_from: Option<usize>) {
        let hl = sub.history.len();
        for (i, c) in feas.iter().enumerate() {
            let (b1, b2) = c.beta.split_at(hl);
            let mut row = self.padded(b2);
            if let Some(s) = slack_from {
                row[s + i] = -1.0;
            }
            self.push_le(row, c.theta - dot(b1, &sub.history), neg(b1), RowKind::FeasibilityCut);
        }
    }

    /// Stage problem: cost of `x_t` plus the cut model of the cost-to-go.
    ///
    /// `z_lower` is the lower bound of the cost-to-go variable; `None` fixes
    /// it at zero (last stage).
    pub fn stage(
        sub: &SubproblemData,
        opt: &[OptimalityCut<f64>],
        feas: &[FeasibilityCut<f64>],
        z_lower: Option<f64>,
    ) -> Self {
        let n = sub.lb.len();
        let hl = sub.history.len();
        let multi = sub.pieces.len() > 1;
        let mut me = Self::with_columns(sub, 1 + usize::from(multi));
        let z = n;
        me.z = Some(z);
        match z_lower {
            Some(l) => me.lp.set_bounds(z, l, f64::INFINITY),
            None => me.lp.set_bounds(z, 0.0, 0.0),
        }
        me.lp.cost[z] = 1.0;
        if multi {
            let w = n + 1;
            me.w = Some(w);
            me.lp.set_bounds(w, f64::NEG_INFINITY, f64::INFINITY);
            me.lp.cost[w] = 1.0;
        } else {
            me.lp.cost[..n].copy_from_slice(&sub.pieces[0].c);
            me.objective_constant = sub.pieces[0].d;
            me.objective_grad = sub.piece_history[0].clone();
        }

        for ((row, &rhs), grad) in sub.eq_matrix.iter().zip(&sub.eq_rhs).zip(&sub.eq_history) {
            let row = me.padded(row);
            me.lp.add_eq(row, rhs);
            me.eq_grad.push(neg(grad));
        }
        for ((row, &rhs), grad) in sub.ineq_matrix.iter().zip(&sub.ineq_rhs).zip(&sub.ineq_history) {
            let row = me.padded(row);
            me.push_le(row, rhs, neg(grad), RowKind::Inequality);
        }
        if let Some(w) = me.w {
            for (piece, ch) in sub.pieces.iter().zip(&sub.piece_history) {
                let mut row = me.padded(&piece.c);
                row[w] = -1.0;
                me.push_le(row, -piece.d, neg(ch), RowKind::Epigraph);
            }
        }
        if z_lower.is_some() {
            // identical cuts (common once the iterates settle) only add
            // degenerate pivots; the first copy carries the multiplier
            let mut seen = HashSet::new();
            for c in opt {
                let key: Vec<u64> = c.beta.iter().chain(std::iter::once(&c.intercept())).map(|v| v.to_bits()).collect();
                if !seen.insert(key) {
                    continue;
                }
                let (b1, b2) = c.beta.split_at(hl);
                let (a1, a2) = c.anchor.split_at(hl);
                let mut row = me.padded(b2);
                row[z] = -1.0;
                let shift: f64 = b1.iter().zip(&sub.history).zip(a1).map(|((b, h), a)| b * (h - a)).sum();
                let rhs = -c.theta - shift + dot(b2, a2);
                me.push_le(row, rhs, neg(b1), RowKind::OptimalityCut);
            }
            me.push_feasibility_rows(sub, feas, None);
        }
        me
    }

    /// Phase-I problem: total slack needed to satisfy the stage constraints
    /// and the feasibility cuts on the cost-to-go.
    pub fn phase_one(sub: &SubproblemData, feas: &[FeasibilityCut<f64>]) -> Self {
        let n = sub.lb.len();
        let q = sub.eq_rhs.len();
        let g = sub.ineq_rhs.len();
        let extra = 2 * q + g + feas.len();
        let mut me = Self::with_columns(sub, extra);
        for j in n..n + extra {
            me.lp.cost[j] = 1.0;
        }
        let (up, down, gs, fs) = (n, n + q, n + 2 * q, n + 2 * q + g);
        for (i, ((row, &rhs), grad)) in sub.eq_matrix.iter().zip(&sub.eq_rhs).zip(&sub.eq_history).enumerate() {
            let mut row = me.padded(row);
            row[up + i] = 1.0;
            row[down + i] = -1.0;
            me.lp.add_eq(row, rhs);
            me.eq_grad.push(neg(grad));
        }
        for (i, ((row, &rhs), grad)) in sub.ineq_matrix.iter().zip(&sub.ineq_rhs).zip(&sub.ineq_history).enumerate() {
            let mut row = me.padded(row);
            row[gs + i] = -1.0;
            me.push_le(row, rhs, neg(grad), RowKind::Inequality);
        }
        me.push_feasibility_rows(sub, feas, Some(fs));
        me
    }

    /// Optimal value of the stage problem (objective plus absorbed constant).
    pub fn value(&self, sol: &LpSolution<f64>) -> f64 {
        sol.objective + self.objective_constant
    }
}

/// A subgradient of a stage value function in the history, split by source.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSubgradient {
    pub s: Vec<f64>,
    pub cost_term: Vec<f64>,
    pub equality_term: Vec<f64>,
    pub inequality_term: Vec<f64>,
    pub cut_term: Vec<f64>,
}

pub fn assemble_pi(stage: &StageLp, sol: &LpSolution<f64>) -> Result<ValueSubgradient, ValueFnError> {
    if sol.status != LpStatus::Optimal {
        return Err(ValueFnError::NotOptimal(sol.status));
    }
    let hl = stage.objective_grad.len();
    let mut cost_term = stage.objective_grad.clone();
    let mut equality_term = vec![0.0; hl];
    let mut inequality_term = vec![0.0; hl];
    let mut cut_term = vec![0.0; hl];
    for (grad, &lambda) in stage.eq_grad.iter().zip(&sol.dual_eq) {
        for (t, g) in equality_term.iter_mut().zip(grad) {
            *t += lambda * g;
        }
    }
    for ((grad, &mu), kind) in stage.le_grad.iter().zip(&sol.dual_ineq).zip(&stage.le_kind) {
        if mu < DUAL_ZERO {
            continue;
        }
        let target = match kind {
            RowKind::Epigraph => &mut cost_term,
            RowKind::OptimalityCut | RowKind::FeasibilityCut => &mut cut_term,
            RowKind::Inequality | RowKind::Equality => &mut inequality_term,
        };
        for (t, g) in target.iter_mut().zip(grad) {
            *t -= mu * g;
        }
    }
    let s = (0..hl).map(|i| cost_term[i] + equality_term[i] + inequality_term[i] + cut_term[i]).collect();
    Ok(ValueSubgradient { s, cost_term, equality_term, inequality_term, cut_term })
}

/// Bound `(upper - lower) / eps` on the norm of any subgradient of a convex
/// function bounded by `upper` on an `eps`-ball and by `lower` below.
pub fn subgradient_bound(upper: f64, lower: f64, eps: f64) -> Result<f64, ValueFnError> {
    if !(eps > 0.0) {
        return Err(ValueFnError::NonPositiveRadius(eps));
    }
    if upper < lower {
        return Err(ValueFnError::InvertedValues { upper, lower });
    }
    Ok((upper - lower) / eps)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubgradientReport {
    pub checked: usize,
    /// Sample points where `Q(x) < Q(x0) + <s, x - x0> - tol`, with the gap.
    pub violations: Vec<(Vec<f64>, f64)>,
    pub worst_gap: f64,
}

/// Tests the subgradient inequality of `s` at `x0` at `n_samples` points drawn
/// uniformly from the sup-norm ball of `radius` around `x0`, clipped to the
/// box `[lo, hi]`. `q_eval` returns `None` outside the function's domain;
/// such points are skipped.
#[allow(clippy::too_many_arguments)]
pub fn check_subgradient<F, R>(
    mut q_eval: F,
    x0: &[f64],
    s: &[f64],
    n_samples: usize,
    radius: f64,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    rng: &mut R,
) -> SubgradientReport
where
    F: FnMut(&[f64]) -> Option<f64>,
    R: Rng + ?Sized,
{
    let mut report = SubgradientReport::default();
    let Some(q0) = q_eval(x0) else {
        return report;
    };
    for _ in 0..n_samples {
        let x: Vec<f64> = (0..x0.len())
            .map(|i| {
                let a = (x0[i] - radius).max(lo[i]);
                let b = (x0[i] + radius).min(hi[i]);
                if b > a {
                    rng.gen_range(a..=b)
                } else {
                    a
                }
            })
            .collect();
        let Some(q) = q_eval(&x) else { continue };
        report.checked += 1;
        let lin = q0 + x.iter().zip(x0).zip(s).map(|((a, b), g)| (a - b) * g).sum::<f64>();
        let gap = lin - q;
        report.worst_gap = report.worst_gap.max(gap);
        if gap > tol {
            report.violations.push((x, gap));
        }
    }
    report
}
