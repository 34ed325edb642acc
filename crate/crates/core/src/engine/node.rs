//! Single-node solves against a cut pool.

use crate::cuts::{CutPool, PoolView};
use crate::lp::{self, LpStatus};
use crate::model::{assemble_subproblem, NodeKey, Topology};
use crate::valuefn::{assemble_pi, StageLp, ValueSubgradient};

use super::EngineError;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSolution {
    pub key: NodeKey,
    /// Decision `x_t`.
    pub x: Vec<f64>,
    /// Stage value (cost of `x_t` plus the cut model of the cost-to-go).
    pub value: f64,
    pub pi: ValueSubgradient,
    pub pivots: usize,
}

fn pool_prefix(pool: &CutPool<f64>, view: Option<PoolView>) -> PoolView {
    view.unwrap_or_else(|| pool.view())
}

/// Solves the stage problem of `key` at `history`, using the cost-to-go pool
/// owned by `key` (truncated to `view` when given).
pub fn solve_node(
    topo: &Topology<'_>,
    pools: &[CutPool<f64>],
    key: NodeKey,
    history: &[f64],
    view: Option<PoolView>,
) -> Result<NodeSolution, EngineError> {
    let sub = assemble_subproblem(topo, key, history)?;
    let stage = match topo.lower_bound_after(key) {
        None => StageLp::stage(&sub, &[], &[], None),
        Some(l) => {
            let pool = &pools[topo.pool_slot(key)];
            let v = pool_prefix(pool, view);
            StageLp::stage(&sub, &pool.optimality()[..v.optimality], &pool.feasibility()[..v.feasibility], Some(l))
        }
    };
    let sol = lp::solve(&stage.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(EngineError::NoRecourse { stage: sub.stage, node: format!("{key:?}") }),
        LpStatus::Unbounded => return Err(EngineError::Unbounded { stage: sub.stage }),
    }
    let pi = assemble_pi(&stage, &sol)?;
    Ok(NodeSolution {
        key,
        x: sol.x[..topo.dim()].to_vec(),
        value: stage.value(&sol),
        pi,
        pivots: sol.pivots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneSolution {
    pub key: NodeKey,
    pub value: f64,
    pub pi: ValueSubgradient,
}

/// Minimal total constraint violation of `key`'s stage problem at `history`,
/// counting the feasibility cuts already known for its cost-to-go.
pub fn phase_one(
    topo: &Topology<'_>,
    pools: &[CutPool<f64>],
    key: NodeKey,
    history: &[f64],
) -> Result<PhaseOneSolution, EngineError> {
    let sub = assemble_subproblem(topo, key, history)?;
    let feas = if topo.is_leaf(key) { &[][..] } else { pools[topo.pool_slot(key)].feasibility() };
    let stage = StageLp::phase_one(&sub, feas);
    let sol = lp::solve(&stage.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(EngineError::Numerical(format!("phase-I problem reported {:?}", sol.status)));
    }
    let pi = assemble_pi(&stage, &sol)?;
    Ok(PhaseOneSolution { key, value: stage.value(&sol), pi })
}
