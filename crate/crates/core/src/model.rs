//! Problem data, validation, and per-node subproblem assembly.
//!
//! Two layouts are supported. A *lattice* problem stores, for every stage, the
//! list of realizations of a stagewise-independent process; the scenario tree
//! is implicit and cuts can be shared by all nodes of a stage. A *tree* problem
//! lists every node explicitly with a parent link, which admits arbitrary
//! interstage dependence.
//!
//! Decision histories are always passed as the concatenation
//! `x_{1:t-1}` (length `(t-1) * dim`); the initial decision `x0` lives in the
//! problem and enters only right-hand sides.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{validate_risk_set, RiskSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed scenario structure: {0}")]
    Structure(String),
    #[error("invalid problem:\n{0}")]
    Invalid(ValidationReport),
    #[error("cannot parse problem: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Lattice,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPiece {
    /// Coefficients over the concatenated decisions `x_{1:t}`.
    pub c: Vec<f64>,
    pub d: f64,
}

/// Convex cost `max_i <c_i, x_{1:t}> + d_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PwlConvexCost {
    pub pieces: Vec<CostPiece>,
}

impl PwlConvexCost {
    pub fn linear(c: Vec<f64>) -> Self {
        Self { pieces: vec![CostPiece { c, d: 0.0 }] }
    }

    pub fn is_linear(&self) -> bool {
        self.pieces.len() == 1
    }
}

/// Value of a max-of-affine cost at `x_{1:t}` together with the history block
/// (first `(t-1) * dim` entries) of the lowest-index active piece.
pub fn evaluate_cost_and_history_subgradient(cost: &PwlConvexCost, x: &[f64], dim: usize) -> (f64, Vec<f64>) {
    let values: Vec<f64> = cost
        .pieces
        .iter()
        .map(|p| p.c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p.d)
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (1.0 + best.abs());
    let active = values.iter().position(|&v| v >= best - tol).unwrap_or(0);
    let hist_len = x.len().saturating_sub(dim);
    (best, cost.pieces[active].c[..hist_len].to_vec())
}

mod bounds_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize_lower<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }

    pub fn deserialize_upper<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Realization payload of one node (or one lattice realization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeData {
    pub prob: f64,
    #[serde(rename = "cost_pieces")]
    pub cost: PwlConvexCost,
    /// `A[tau]` multiplies `x_tau` for `tau = 0..=t`; each block is `q x dim`.
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Vec<f64>,
    /// Rows over `x_{0:t}` (`(t+1) * dim` columns); reads `G x_{0:t} <= h`.
    #[serde(rename = "G", default)]
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: Vec<f64>,
    /// `null` in JSON stands for an infinite bound (rejected by validation).
    #[serde(serialize_with = "bounds_serde::serialize", deserialize_with = "bounds_serde::deserialize_lower")]
    pub lb: Vec<f64>,
    #[serde(serialize_with = "bounds_serde::serialize", deserialize_with = "bounds_serde::deserialize_upper")]
    pub ub: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Risk measure aggregating this stage's realizations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
    pub realizations: Vec<NodeData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: i64,
    /// `None` marks the first-stage node (the child of the implicit root).
    pub parent: Option<i64>,
    /// Risk measure aggregating this node's children.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
    #[serde(flatten)]
    pub data: NodeData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub horizon: usize,
    pub dim: usize,
    pub x0: Vec<f64>,
    pub form: Form,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<TreeNode>,
    /// `L_t` for `t = 2..=T`: certified lower bounds on the recourse functions.
    pub lower_value_bound: Vec<f64>,
    /// Default risk measure for stages / nodes that do not name one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
}

impl Problem {
    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    /// Replaces every stage / node risk measure by `spec`.
    pub fn with_risk_override(mut self, spec: RiskSpec) -> Self {
        for s in &mut self.stages {
            s.risk = Some(spec.clone());
        }
        for n in &mut self.nodes {
            n.risk = Some(spec.clone());
        }
        self.risk = Some(spec);
        self
    }

    pub fn all_costs_linear(&self) -> bool {
        self.stages.iter().flat_map(|s| &s.realizations).all(|d| d.cost.is_linear())
            && self.nodes.iter().all(|n| n.data.cost.is_linear())
    }

    fn default_risk(&self) -> RiskSpec {
        self.risk.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { location: location.into(), message: message.into() });
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(ModelError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

const PROB_TOL: f64 = 1e-9;

fn check_probabilities(report: &mut ValidationReport, loc: &str, probs: &[f64]) {
    if probs.iter().any(|&p| !(p > 0.0)) {
        report.push(loc, "probabilities must be positive");
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        report.push(loc, format!("probabilities sum ≠ 1 (sum = {sum})"));
    }
}

fn check_node_data(report: &mut ValidationReport, loc: &str, d: &NodeData, t: usize, n: usize) {
    if d.cost.pieces.is_empty() {
        report.push(loc, "cost needs at least one piece");
    }
    for (i, p) in d.cost.pieces.iter().enumerate() {
        if p.c.len() != t * n {
            report.push(loc, format!("cost piece {i} has {} coefficients, expected {}", p.c.len(), t * n));
        }
        if p.c.iter().any(|x| !x.is_finite()) || !p.d.is_finite() {
            report.push(loc, format!("cost piece {i} is not finite"));
        }
    }
    let q = d.b.len();
    if q > 0 || !d.a.is_empty() {
        if d.a.len() != t + 1 {
            report.push(loc, format!("A has {} blocks, expected {}", d.a.len(), t + 1));
        }
        for (tau, blk) in d.a.iter().enumerate() {
            if blk.len() != q || blk.iter().any(|r| r.len() != n) {
                report.push(loc, format!("A[{tau}] is not {q}x{n}"));
            }
        }
    }
    if d.g.iter().any(|r| r.len() != (t + 1) * n) {
        report.push(loc, format!("G rows must have {} columns", (t + 1) * n));
    }
    if d.h.len() != d.g.len() {
        report.push(loc, format!("h has {} entries for {} rows of G", d.h.len(), d.g.len()));
    }
    let finite_data = d.b.iter().chain(&d.h).all(|x| x.is_finite())
        && d.a.iter().flatten().flatten().all(|x| x.is_finite())
        && d.g.iter().flatten().all(|x| x.is_finite());
    if !finite_data {
        report.push(loc, "constraint data must be finite");
    }
    if d.lb.len() != n || d.ub.len() != n {
        report.push(loc, format!("bounds must have length {n}"));
    } else {
        if d.lb.iter().chain(&d.ub).any(|x| !x.is_finite()) {
            report.push(loc, "non-compact decision set (infinite bound)");
        }
        if d.lb.iter().zip(&d.ub).any(|(l, u)| l > u) {
            report.push(loc, "empty decision box (lower > upper)");
        }
    }
}

/// Structural and numerical checks; an empty report means the problem is
/// ready for the solvers.
pub fn validate_problem(p: &Problem) -> ValidationReport {
    let mut r = ValidationReport::default();
    let (t_max, n) = (p.horizon, p.dim);
    if t_max == 0 {
        r.push("horizon", "must be at least 1");
    }
    if n == 0 {
        r.push("dim", "must be at least 1");
    }
    if p.x0.len() != n {
        r.push("x0", format!("length {} differs from dim {n}", p.x0.len()));
    }
    if p.lower_value_bound.len() != t_max.saturating_sub(1) {
        r.push(
            "lower_value_bound",
            format!("expected {} entries (L_2..L_T), got {}", t_max.saturating_sub(1), p.lower_value_bound.len()),
        );
    }
    if p.lower_value_bound.iter().any(|x| !x.is_finite()) {
        r.push("lower_value_bound", "entries must be finite");
    }
    if let Some(spec) = &p.risk {
        for v in validate_risk_set(spec, &[1.0]) {
            r.push("risk", v);
        }
    }
    match p.form {
        Form::Lattice => validate_lattice(p, &mut r),
        Form::Tree => validate_tree(p, &mut r),
    }
    r
}

fn validate_lattice(p: &Problem, r: &mut ValidationReport) {
    if !p.nodes.is_empty() {
        r.push("nodes", "lattice problems take `stages`, not `nodes`");
    }
    if p.stages.len() != p.horizon {
        r.push("stages", format!("expected {} stages, got {}", p.horizon, p.stages.len()));
    }
    for (s, stage) in p.stages.iter().enumerate() {
        let t = s + 1;
        let loc = format!("stages[{s}]");
        if stage.realizations.is_empty() {
            r.push(&loc, "needs at least one realization");
            continue;
        }
        if t == 1 && stage.realizations.len() != 1 {
            r.push(&loc, "first stage must be deterministic (exactly one realization)");
        }
        let probs: Vec<f64> = stage.realizations.iter().map(|d| d.prob).collect();
        check_probabilities(r, &loc, &probs);
        if let Some(spec) = &stage.risk {
            for v in validate_risk_set(spec, &probs) {
                r.push(format!("{loc}.risk"), v);
            }
        }
        for (j, d) in stage.realizations.iter().enumerate() {
            check_node_data(r, &format!("{loc}.realizations[{j}]"), d, t, p.dim);
        }
    }
}

fn validate_tree(p: &Problem, r: &mut ValidationReport) {
    if !p.stages.is_empty() {
        r.push("stages", "tree problems take `nodes`, not `stages`");
    }
    match TreeIndex::build(p) {
        Err(e) => r.push("nodes", e),
        Ok(idx) => {
            for (i, node) in p.nodes.iter().enumerate() {
                let loc = format!("nodes[id={}]", node.id);
                check_node_data(r, &loc, &node.data, idx.stage[i], p.dim);
                if idx.stage[i] < p.horizon && idx.children[i].is_empty() {
                    r.push(&loc, format!("leaf at depth {} but horizon is {}", idx.stage[i], p.horizon));
                }
                if idx.stage[i] > p.horizon {
                    r.push(&loc, format!("depth {} exceeds horizon {}", idx.stage[i], p.horizon));
                }
                if !idx.children[i].is_empty() {
                    let probs: Vec<f64> = idx.children[i].iter().map(|&c| p.nodes[c].data.prob).collect();
                    check_probabilities(r, &format!("{loc}.children"), &probs);
                    if let Some(spec) = &node.risk {
                        for v in validate_risk_set(spec, &probs) {
                            r.push(format!("{loc}.risk"), v);
                        }
                    }
                }
            }
            let root = &p.nodes[idx.root].data;
            if (root.prob - 1.0).abs() > PROB_TOL {
                r.push(format!("nodes[id={}]", p.nodes[idx.root].id), "first-stage node must have probability 1");
            }
        }
    }
}

/// Parent/child links of an explicit tree, resolved to positions in
/// `Problem::nodes`.
#[derive(Debug, Clone)]
pub struct TreeIndex {
    pub root: usize,
    pub children: Vec<Vec<usize>>,
    pub parent: Vec<Option<usize>>,
    pub stage: Vec<usize>,
}

impl TreeIndex {
    pub fn build(p: &Problem) -> Result<Self, String> {
        let mut pos = HashMap::new();
        for (i, node) in p.nodes.iter().enumerate() {
            if pos.insert(node.id, i).is_some() {
                return Err(format!("duplicate node id {}", node.id));
            }
        }
        let roots: Vec<usize> = (0..p.nodes.len()).filter(|&i| p.nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(format!("expected exactly one first-stage node (parent null), found {}", roots.len()));
        }
        let mut parent = vec![None; p.nodes.len()];
        let mut children = vec![Vec::new(); p.nodes.len()];
        for (i, node) in p.nodes.iter().enumerate() {
            if let Some(pid) = node.parent {
                let &pi = pos.get(&pid).ok_or_else(|| format!("node {} has unknown parent {pid}", node.id))?;
                parent[i] = Some(pi);
                children[pi].push(i);
            }
        }
        let mut stage = vec![0usize; p.nodes.len()];
        for i in 0..p.nodes.len() {
            let mut depth = 1;
            let mut cur = i;
            while let Some(pi) = parent[cur] {
                depth += 1;
                cur = pi;
                if depth > p.nodes.len() {
                    return Err(format!("cycle through node {}", p.nodes[i].id));
                }
            }
            stage[i] = depth;
        }
        Ok(Self { root: roots[0], children, parent, stage })
    }
}

/// Handle on a node of the (possibly implicit) scenario tree.
///
/// `Root` is the stage-0 node holding `x0`. In lattice form a key names a
/// stage realization; the concrete tree node is determined by the decision
/// history it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKey {
    Root,
    Lattice { stage: usize, index: usize },
    Tree(usize),
}

/// Navigation over a validated problem.
#[derive(Debug, Clone)]
pub struct Topology<'p> {
    problem: &'p Problem,
    tree: Option<TreeIndex>,
    /// Risk measure aggregating the children of each pool slot's owner.
    slot_risk: Vec<RiskSpec>,
}

impl<'p> Topology<'p> {
    pub fn new(problem: &'p Problem) -> Result<Self, ModelError> {
        validate_problem(problem).into_result()?;
        let default = problem.default_risk();
        match problem.form {
            Form::Lattice => {
                let t_max = problem.horizon;
                // slot s (stage s+1 nodes) aggregates stage s+2's realizations
                let slot_risk = (0..t_max)
                    .map(|s| {
                        problem
                            .stages
                            .get(s + 1)
                            .and_then(|st| st.risk.clone())
                            .unwrap_or_else(|| default.clone())
                    })
                    .collect();
                Ok(Self { problem, tree: None, slot_risk })
            }
            Form::Tree => {
                let tree = TreeIndex::build(problem).map_err(ModelError::Structure)?;
                let slot_risk = problem.nodes.iter().map(|n| n.risk.clone().unwrap_or_else(|| default.clone())).collect();
                Ok(Self { problem, tree: Some(tree), slot_risk })
            }
        }
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn horizon(&self) -> usize {
        self.problem.horizon
    }

    pub fn dim(&self) -> usize {
        self.problem.dim
    }

    pub fn tree(&self) -> Option<&TreeIndex> {
        self.tree.as_ref()
    }

    pub fn first_stage(&self) -> NodeKey {
        match &self.tree {
            None => NodeKey::Lattice { stage: 1, index: 0 },
            Some(t) => NodeKey::Tree(t.root),
        }
    }

    pub fn stage(&self, key: NodeKey) -> usize {
        match key {
            NodeKey::Root => 0,
            NodeKey::Lattice { stage, .. } => stage,
            NodeKey::Tree(i) => self.tree.as_ref().expect("tree form").stage[i],
        }
    }

    pub fn is_leaf(&self, key: NodeKey) -> bool {
        self.stage(key) == self.horizon()
    }

    pub fn children(&self, key: NodeKey) -> Vec<NodeKey> {
        match key {
            NodeKey::Root => vec![self.first_stage()],
            NodeKey::Lattice { stage, .. } => {
                if stage >= self.horizon() {
                    Vec::new()
                } else {
                    (0..self.problem.stages[stage].realizations.len())
                        .map(|index| NodeKey::Lattice { stage: stage + 1, index })
                        .collect()
                }
            }
            NodeKey::Tree(i) => self.tree.as_ref().expect("tree form").children[i].iter().map(|&c| NodeKey::Tree(c)).collect(),
        }
    }

    pub fn data(&self, key: NodeKey) -> &'p NodeData {
        match key {
            NodeKey::Root => panic!("the root node carries no data"),
            NodeKey::Lattice { stage, index } => &self.problem.stages[stage - 1].realizations[index],
            NodeKey::Tree(i) => &self.problem.nodes[i].data,
        }
    }

    /// Transition probability from the parent.
    pub fn prob(&self, key: NodeKey) -> f64 {
        match key {
            NodeKey::Root => 1.0,
            _ => self.data(key).prob,
        }
    }

    pub fn num_pool_slots(&self) -> usize {
        match &self.tree {
            None => self.horizon(),
            Some(_) => self.problem.nodes.len(),
        }
    }

    /// Pool holding cuts on the cost-to-go after deciding at `key`.
    pub fn pool_slot(&self, key: NodeKey) -> usize {
        match key {
            NodeKey::Root => panic!("the root node owns no cut pool"),
            NodeKey::Lattice { stage, .. } => stage - 1,
            NodeKey::Tree(i) => i,
        }
    }

    /// Representative node owning a pool slot.
    pub fn slot_owner(&self, slot: usize) -> NodeKey {
        match &self.tree {
            None => NodeKey::Lattice { stage: slot + 1, index: 0 },
            Some(_) => NodeKey::Tree(slot),
        }
    }

    /// Label written to cut dumps: the stage in lattice form, the node id in
    /// tree form.
    pub fn slot_label(&self, slot: usize) -> i64 {
        match &self.tree {
            None => slot as i64 + 1,
            Some(_) => self.problem.nodes[slot].id,
        }
    }

    pub fn slot_from_label(&self, label: i64) -> Option<usize> {
        match &self.tree {
            None => (label >= 1 && (label as usize) <= self.horizon()).then(|| label as usize - 1),
            Some(_) => self.problem.nodes.iter().position(|n| n.id == label),
        }
    }

    pub fn slot_stage(&self, slot: usize) -> usize {
        self.stage(self.slot_owner(slot))
    }

    /// Risk measure aggregating the children of `key`.
    pub fn child_risk(&self, key: NodeKey) -> &RiskSpec {
        static EXPECTATION: RiskSpec = RiskSpec::Expectation;
        match key {
            NodeKey::Root => &EXPECTATION,
            _ => &self.slot_risk[self.pool_slot(key)],
        }
    }

    /// Certified lower bound on the cost-to-go after `key`, `None` at leaves
    /// (the cost-to-go is identically zero there).
    pub fn lower_bound_after(&self, key: NodeKey) -> Option<f64> {
        let t = self.stage(key);
        (t < self.horizon()).then(|| self.problem.lower_value_bound[t - 1])
    }

    /// Box of the decision at `key`.
    pub fn bounds(&self, key: NodeKey) -> (&'p [f64], &'p [f64]) {
        let d = self.data(key);
        (&d.lb, &d.ub)
    }

    /// Box product of `x_{1:t}` for the decisions leading to a stage-`t`
    /// node; for lattices, the union of the stage boxes (componentwise hull).
    pub fn history_box(&self, key: NodeKey) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        match key {
            NodeKey::Root => {}
            NodeKey::Lattice { stage, .. } => {
                for s in 0..stage {
                    let real = &self.problem.stages[s].realizations;
                    for c in 0..self.dim() {
                        lo.push(real.iter().map(|d| d.lb[c]).fold(f64::INFINITY, f64::min));
                        hi.push(real.iter().map(|d| d.ub[c]).fold(f64::NEG_INFINITY, f64::max));
                    }
                }
            }
            NodeKey::Tree(i) => {
                let tree = self.tree.as_ref().expect("tree form");
                let mut chain = vec![i];
                while let Some(p) = tree.parent[*chain.last().unwrap()] {
                    chain.push(p);
                }
                for &node in chain.iter().rev() {
                    lo.extend_from_slice(&self.problem.nodes[node].data.lb);
                    hi.extend_from_slice(&self.problem.nodes[node].data.ub);
                }
            }
        }
        (lo, hi)
    }
}

/// Stage subproblem data with the decision history substituted in.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemData {
    pub stage: usize,
    pub key: NodeKey,
    /// `x_{1:t-1}`.
    pub history: Vec<f64>,
    /// Cost pieces restricted to `x_t`; `d` absorbs the history terms.
    pub pieces: Vec<CostPiece>,
    /// History block of each piece's coefficient vector.
    pub piece_history: Vec<Vec<f64>>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    /// Columns of the equality rows acting on `x_{1:t-1}`.
    pub eq_history: Vec<Vec<f64>>,
    pub ineq_matrix: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub ineq_history: Vec<Vec<f64>>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

/// Substitutes `x0` and the history `x_{1:t-1}` into the data of `key`.
pub fn assemble_subproblem(topo: &Topology<'_>, key: NodeKey, history: &[f64]) -> Result<SubproblemData, ModelError> {
    let p = topo.problem();
    let n = p.dim;
    let t = topo.stage(key);
    if t == 0 {
        return Err(ModelError::Dimension("the root node has no subproblem".into()));
    }
    if history.len() != (t - 1) * n {
        return Err(ModelError::Dimension(format!(
            "stage {t} needs a history of length {}, got {}",
            (t - 1) * n,
            history.len()
        )));
    }
    let d = topo.data(key);
    let hist_block = |tau: usize| &history[(tau - 1) * n..tau * n];
    let matvec = |m: &[f64], x: &[f64]| m.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();

    let mut pieces = Vec::with_capacity(d.cost.pieces.len());
    let mut piece_history = Vec::with_capacity(d.cost.pieces.len());
    for piece in &d.cost.pieces {
        let (ch, ct) = piece.c.split_at((t - 1) * n);
        pieces.push(CostPiece { c: ct.to_vec(), d: piece.d + matvec(ch, history) });
        piece_history.push(ch.to_vec());
    }

    let q = d.b.len();
    let mut eq_matrix = Vec::with_capacity(q);
    let mut eq_rhs = Vec::with_capacity(q);
    let mut eq_history = Vec::with_capacity(q);
    for i in 0..q {
        let mut rhs = d.b[i] - matvec(&d.a[0][i], &p.x0);
        let mut hrow = Vec::with_capacity((t - 1) * n);
        for tau in 1..t {
            rhs -= matvec(&d.a[tau][i], hist_block(tau));
            hrow.extend_from_slice(&d.a[tau][i]);
        }
        eq_matrix.push(d.a[t][i].clone());
        eq_rhs.push(rhs);
        eq_history.push(hrow);
    }

    let mut ineq_matrix = Vec::with_capacity(d.g.len());
    let mut ineq_rhs = Vec::with_capacity(d.g.len());
    let mut ineq_history = Vec::with_capacity(d.g.len());
    for (row, &h) in d.g.iter().zip(&d.h) {
        let (g0, rest) = row.split_at(n);
        let (gh, gt) = rest.split_at((t - 1) * n);
        ineq_rhs.push(h - matvec(g0, &p.x0) - matvec(gh, history));
        ineq_matrix.push(gt.to_vec());
        ineq_history.push(gh.to_vec());
    }

    Ok(SubproblemData {
        stage: t,
        key,
        history: history.to_vec(),
        pieces,
        piece_history,
        eq_matrix,
        eq_rhs,
        eq_history,
        ineq_matrix,
        ineq_rhs,
        ineq_history,
        lb: d.lb.clone(),
        ub: d.ub.clone(),
    })
}
