//! Exact reference solvers for small instances.
//!
//! * [`extensive_form_value`]: the deterministic equivalent as one LP over
//!   every node of the expanded scenario tree (expectation only).
//! * [`exact_nested_decomposition`]: cutting-plane sweeps over the full tree
//!   until a sweep changes no pool; exact for polyhedral problems and any
//!   polyhedral risk measure.
//! * [`RecourseOracle`]: the true recourse value `Q_t(x_{1:t-1})` at a given
//!   history, by nested decomposition of the subtree below it.

use thiserror::Error;

use crate::cuts::{build_feasibility_cut, build_optimality_cut, CutPool, PHASE_ONE_THRESHOLD};
use crate::engine::{phase_one, solve_node, EngineError, PhaseOneSolution};
use crate::lp::{self, LpProblem, LpStatus};
use crate::model::{NodeKey, Problem, Topology};
use crate::risk::{risk_value_and_density, RiskSpec};

pub const MAX_EXTENSIVE_NODES: usize = 10_000;
pub const MAX_SWEEPS: usize = 10_000;
/// Relative improvement at the anchor below which a cut is not added.
pub const IMPROVEMENT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("the problem is infeasible")]
    Infeasible,
    #[error("expanded tree has {0} nodes, above the oracle limit")]
    TooLarge(usize),
    #[error("the extensive form only covers expectation; use nested decomposition")]
    NotExpectation,
    #[error("nested decomposition did not settle within {0} sweeps")]
    NoConvergence(usize),
    #[error("extensive-form LP is unbounded")]
    Unbounded,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
    #[error(transparent)]
    Cut(#[from] crate::cuts::CutError),
    #[error(transparent)]
    Risk(#[from] crate::risk::RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ExtensiveForm,
    NestedDecomposition,
}

impl OracleMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExtensiveForm => "extensive-form",
            Self::NestedDecomposition => "nested",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub x1: Vec<f64>,
    pub method: OracleMethod,
    /// Sweeps (nested decomposition) or LP columns (extensive form).
    pub size: usize,
}

/// Node of the fully expanded scenario tree.
#[derive(Debug, Clone)]
pub struct ExpandedNode {
    pub key: NodeKey,
    pub parent: Option<usize>,
    pub stage: usize,
    /// Probability of reaching the node.
    pub path_prob: f64,
}

/// Expands the (possibly implicit) tree breadth-first; parents precede
/// children.
pub fn expand_tree(topo: &Topology<'_>, limit: usize) -> Result<Vec<ExpandedNode>, OracleError> {
    let first = topo.first_stage();
    let mut nodes = vec![ExpandedNode { key: first, parent: None, stage: 1, path_prob: 1.0 }];
    let mut i = 0;
    while i < nodes.len() {
        let (key, stage, pp) = (nodes[i].key, nodes[i].stage, nodes[i].path_prob);
        for c in topo.children(key) {
            nodes.push(ExpandedNode { key: c, parent: Some(i), stage: stage + 1, path_prob: pp * topo.prob(c) });
            if nodes.len() > limit {
                return Err(OracleError::TooLarge(nodes.len()));
            }
        }
        i += 1;
    }
    Ok(nodes)
}

fn is_expectation(spec: &Option<RiskSpec>) -> bool {
    matches!(spec, None | Some(RiskSpec::Expectation))
}

pub fn all_expectation(p: &Problem) -> bool {
    is_expectation(&p.risk)
        && p.stages.iter().all(|s| is_expectation(&s.risk))
        && p.nodes.iter().all(|n| is_expectation(&n.risk))
}

/// Deterministic equivalent LP over the expanded tree.
pub fn extensive_form_value(p: &Problem) -> Result<OracleResult, OracleError> {
    if !all_expectation(p) {
        return Err(OracleError::NotExpectation);
    }
    let topo = Topology::new(p)?;
    let nodes = expand_tree(&topo, MAX_EXTENSIVE_NODES)?;
    let n = p.dim;

    // column layout: x block per node, then one epigraph column per node
    // with a max-of-affine cost
    let mut x_col = Vec::with_capacity(nodes.len());
    let mut w_col = Vec::with_capacity(nodes.len());
    let mut cols = 0;
    for node in &nodes {
        x_col.push(cols);
        cols += n;
        let multi = topo.data(node.key).cost.pieces.len() > 1;
        w_col.push(multi.then_some(cols));
        cols += usize::from(multi);
    }
    let chain = |i: usize| {
        let mut c = vec![i];
        while let Some(par) = nodes[*c.last().unwrap()].parent {
            c.push(par);
        }
        c.reverse();
        c
    };

    let mut lp = LpProblem::new(cols);
    let mut constant = 0.0;
    for (i, node) in nodes.iter().enumerate() {
        let d = topo.data(node.key);
        let anc = chain(i);
        for j in 0..n {
            lp.set_bounds(x_col[i] + j, d.lb[j], d.ub[j]);
        }
        // row over x_{0:t} (first n entries act on x0) scattered onto columns
        let scatter = |coef: &[f64], with_x0: bool| -> (Vec<f64>, f64) {
            let mut row = vec![0.0; cols];
            let mut shift = 0.0;
            for (tau, blk) in coef.chunks(n).enumerate() {
                let pos = match (with_x0, tau) {
                    (true, 0) => {
                        shift += blk.iter().zip(&p.x0).map(|(a, b)| a * b).sum::<f64>();
                        continue;
                    }
                    (true, _) => tau - 1,
                    (false, _) => tau,
                };
                let at = x_col[anc[pos]];
                for (j, &a) in blk.iter().enumerate() {
                    row[at + j] += a;
                }
            }
            (row, shift)
        };
        match w_col[i] {
            None => {
                let (row, _) = scatter(&d.cost.pieces[0].c, false);
                for (c, r) in lp.cost.iter_mut().zip(&row) {
                    *c += node.path_prob * r;
                }
                constant += node.path_prob * d.cost.pieces[0].d;
            }
            Some(w) => {
                lp.set_bounds(w, f64::NEG_INFINITY, f64::INFINITY);
                lp.cost[w] += node.path_prob;
                for piece in &d.cost.pieces {
                    let (mut row, _) = scatter(&piece.c, false);
                    row[w] = -1.0;
                    lp.add_le(row, -piece.d);
                }
            }
        }
        for (r, &b) in d.b.iter().enumerate() {
            let coef: Vec<f64> = d.a.iter().flat_map(|blk| blk[r].iter().copied()).collect();
            let (row, shift) = scatter(&coef, true);
            lp.add_eq(row, b - shift);
        }
        for (g, &h) in d.g.iter().zip(&d.h) {
            let (row, shift) = scatter(g, true);
            lp.add_le(row, h - shift);
        }
    }
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(OracleResult {
            value: sol.objective + constant,
            x1: sol.x[..n].to_vec(),
            method: OracleMethod::ExtensiveForm,
            size: cols,
        }),
        LpStatus::Infeasible => Err(OracleError::Infeasible),
        LpStatus::Unbounded => Err(OracleError::Unbounded),
    }
}

enum Visit {
    Done,
    Infeasible(PhaseOneSolution),
}

/// Full-tree cutting-plane solver with persistent pools (same slots as the
/// sampled drivers: per stage for lattices, per node for trees).
pub struct NestedSolver<'p> {
    topo: Topology<'p>,
    pools: Vec<CutPool<f64>>,
    changed: bool,
    pub sweeps: usize,
    /// First-stage value after each sweep that started at the first stage.
    pub trace: Vec<f64>,
}

impl<'p> NestedSolver<'p> {
    pub fn new(p: &'p Problem) -> Result<Self, OracleError> {
        let topo = Topology::new(p)?;
        let pools = vec![CutPool::new(); topo.num_pool_slots()];
        Ok(Self { topo, pools, changed: false, sweeps: 0, trace: Vec::new() })
    }

    pub fn topology(&self) -> &Topology<'p> {
        &self.topo
    }

    pub fn pools(&self) -> &[CutPool<f64>] {
        &self.pools
    }

    fn visit(&mut self, key: NodeKey, hist: &[f64]) -> Result<Visit, OracleError> {
        let check = phase_one(&self.topo, &self.pools, key, hist)?;
        if check.value > PHASE_ONE_THRESHOLD {
            return Ok(Visit::Infeasible(check));
        }
        if self.topo.is_leaf(key) {
            return Ok(Visit::Done);
        }
        let sol = solve_node(&self.topo, &self.pools, key, hist, None)?;
        let mut h2 = hist.to_vec();
        h2.extend_from_slice(&sol.x);
        let slot = self.topo.pool_slot(key);
        let children = self.topo.children(key);
        for &c in &children {
            if let Visit::Infeasible(ph) = self.visit(c, &h2)? {
                let cut = build_feasibility_cut(ph.value, &ph.pi.s, &h2, self.sweeps)?;
                self.pools[slot].push_feasibility(cut);
                self.changed = true;
                return Ok(Visit::Done);
            }
        }
        let sols = children
            .iter()
            .map(|&c| solve_node(&self.topo, &self.pools, c, &h2, None))
            .collect::<Result<Vec<_>, _>>()?;
        let values: Vec<f64> = sols.iter().map(|s| s.value).collect();
        let pis: Vec<Vec<f64>> = sols.iter().map(|s| s.pi.s.clone()).collect();
        let probs: Vec<f64> = children.iter().map(|&c| self.topo.prob(c)).collect();
        let cut = build_optimality_cut(&values, &pis, &probs, self.topo.child_risk(key), &h2, self.sweeps)?;
        let current = self.pools[slot].evaluate(&h2);
        if cut.theta > current + IMPROVEMENT_TOL * cut.theta.abs().max(1.0) {
            self.pools[slot].push_optimality(cut);
            self.changed = true;
        }
        Ok(Visit::Done)
    }

    /// Sweeps the subtrees of `roots` at `hist` until nothing changes.
    /// Returns `false` if some root is infeasible at `hist`.
    pub fn settle(&mut self, roots: &[NodeKey], hist: &[f64]) -> Result<bool, OracleError> {
        let start = self.sweeps;
        loop {
            self.changed = false;
            self.sweeps += 1;
            for &r in roots {
                if let Visit::Infeasible(_) = self.visit(r, hist)? {
                    return Ok(false);
                }
            }
            if roots == [self.topo.first_stage()] {
                let (v, _) = self.first_stage_value()?;
                self.trace.push(v);
            }
            if !self.changed {
                return Ok(true);
            }
            if self.sweeps - start >= MAX_SWEEPS {
                return Err(OracleError::NoConvergence(MAX_SWEEPS));
            }
        }
    }

    /// First-stage value under the current pools.
    pub fn first_stage_value(&self) -> Result<(f64, Vec<f64>), OracleError> {
        let s = solve_node(&self.topo, &self.pools, self.topo.first_stage(), &[], None)?;
        Ok((s.value, s.x))
    }
}

/// Exact nested risk-averse optimum by full-tree decomposition.
pub fn exact_nested_decomposition(p: &Problem) -> Result<OracleResult, OracleError> {
    let mut nd = NestedSolver::new(p)?;
    let first = nd.topology().first_stage();
    if !nd.settle(&[first], &[])? {
        return Err(OracleError::Infeasible);
    }
    let (value, x1) = nd.first_stage_value()?;
    Ok(OracleResult { value, x1, method: OracleMethod::NestedDecomposition, size: nd.sweeps })
}

/// Extensive form when every risk measure is the expectation, nested
/// decomposition otherwise.
pub fn reference_value(p: &Problem) -> Result<f64, OracleError> {
    if all_expectation(p) {
        extensive_form_value(p).map(|r| r.value)
    } else {
        exact_nested_decomposition(p).map(|r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecourseValue {
    /// `+inf` when the history admits no feasible continuation.
    pub value: f64,
    pub infeasible: bool,
}

/// Evaluates true recourse functions, reusing cuts across queries.
pub struct RecourseOracle<'p> {
    nd: NestedSolver<'p>,
}

impl<'p> RecourseOracle<'p> {
    pub fn new(p: &'p Problem) -> Result<Self, OracleError> {
        Ok(Self { nd: NestedSolver::new(p)? })
    }

    pub fn topology(&self) -> &Topology<'p> {
        self.nd.topology()
    }

    /// Risk-adjusted cost-to-go after deciding at `parent` with history
    /// `x_{1:t}` (`t` = stage of `parent`). Zero past the last stage.
    pub fn value(&mut self, parent: NodeKey, hist: &[f64]) -> Result<RecourseValue, OracleError> {
        if self.nd.topology().is_leaf(parent) {
            return Ok(RecourseValue { value: 0.0, infeasible: false });
        }
        let children = self.nd.topology().children(parent);
        if !self.nd.settle(&children, hist)? {
            return Ok(RecourseValue { value: f64::INFINITY, infeasible: true });
        }
        let topo = self.nd.topology();
        let values = children
            .iter()
            .map(|&c| solve_node(topo, self.nd.pools(), c, hist, None).map(|s| s.value))
            .collect::<Result<Vec<_>, _>>()?;
        let probs: Vec<f64> = children.iter().map(|&c| topo.prob(c)).collect();
        let rho = risk_value_and_density(&values, &probs, topo.child_risk(parent))?;
        Ok(RecourseValue { value: rho.value, infeasible: false })
    }
}

/// One-off evaluation of the true recourse value; see [`RecourseOracle`].
pub fn true_recourse_value(p: &Problem, parent: NodeKey, hist: &[f64]) -> Result<RecourseValue, OracleError> {
    RecourseOracle::new(p)?.value(parent, hist)
}
