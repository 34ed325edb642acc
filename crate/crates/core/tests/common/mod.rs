//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskdp::model::{CostPiece, Form, NodeData, Problem, PwlConvexCost, Stage, TreeNode};
use riskdp::RiskSpec;

pub const BOX: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub horizon: usize,
    pub branches: usize,
    pub dim: usize,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_shape(r: &mut ChaCha8Rng) -> Shape {
    Shape { horizon: r.gen_range(2..=4), branches: r.gen_range(2..=3), dim: r.gen_range(1..=3) }
}

fn round(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Stage data with relatively complete recourse: every component must cover
/// a random demand, less a carried-over fraction of the previous decision, and (for
/// `dim >= 2`) the last component tracks the first previous component
/// through an equality row. All boxes are `[0, BOX]`.
fn random_stage(r: &mut ChaCha8Rng, t: usize, n: usize, prob: f64, kinked: bool) -> NodeData {
    let cols = (t + 1) * n;
    let mut g = Vec::new();
    let mut h = Vec::new();
    let tracked = n >= 2;
    let covered = if tracked { n - 1 } else { n };
    for i in 0..covered {
        let mut row = vec![0.0; cols];
        row[t * n + i] = -1.0;
        if t >= 2 {
            row[(t - 1) * n + i] = -round(r.gen_range(0.3..0.9));
        }
        g.push(row);
        h.push(-round(r.gen_range(0.0..5.0)));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    if tracked {
        a = vec![vec![vec![0.0; n]]; t + 1];
        a[t][0][n - 1] = 1.0;
        if t >= 2 {
            a[t - 1][0][0] = -round(r.gen_range(0.0..0.3));
        }
        b.push(round(r.gen_range(0.0..2.0)));
    }
    let mut c = vec![0.0; t * n];
    for v in &mut c[..(t - 1) * n] {
        *v = round(r.gen_range(-0.2..0.2));
    }
    for j in 0..n {
        c[(t - 1) * n + j] = round(r.gen_range(0.5..2.0));
    }
    let mut pieces = vec![CostPiece { c: c.clone(), d: 0.0 }];
    if kinked {
        let mut c2 = c;
        for j in 0..n {
            c2[(t - 1) * n + j] = round(c2[(t - 1) * n + j] * 2.0);
        }
        pieces.push(CostPiece { c: c2, d: -round(r.gen_range(1.0..4.0)) });
    }
    NodeData {
        prob,
        cost: PwlConvexCost { pieces },
        a,
        b,
        g,
        h,
        lb: vec![0.0; n],
        ub: vec![BOX; n],
    }
}

fn random_probs(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| r.gen_range(1..=4) as f64).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    let head: f64 = p[..m - 1].iter().sum();
    p[m - 1] = 1.0 - head;
    p
}

/// Lower bound on a max-of-affine cost over the box `[0, BOX]^k`, using its
/// first piece.
fn cost_floor(d: &NodeData) -> f64 {
    let p = &d.cost.pieces[0];
    p.d + p.c.iter().map(|&c| (c * BOX).min(0.0)).sum::<f64>()
}

/// `L_t = sum_{s >= t} min_j floor(stage s, realization j)`, valid for any
/// coherent risk measure (which never goes below the minimum outcome).
fn lower_bounds(floors: &[f64]) -> Vec<f64> {
    let t_max = floors.len();
    (2..=t_max).map(|t| floors[t - 1..].iter().sum::<f64>() - 1.0).collect()
}

pub fn random_lattice(seed: u64, shape: Shape, risk: Option<RiskSpec>) -> Problem {
    let mut r = rng(seed);
    let n = shape.dim;
    let kinked = r.gen_bool(0.3);
    let mut stages = Vec::new();
    let mut floors = Vec::new();
    for t in 1..=shape.horizon {
        let m = if t == 1 { 1 } else { shape.branches };
        let probs = if t == 1 { vec![1.0] } else { random_probs(&mut r, m) };
        let reals: Vec<NodeData> = probs.iter().map(|&p| random_stage(&mut r, t, n, p, kinked)).collect();
        floors.push(reals.iter().map(cost_floor).fold(f64::INFINITY, f64::min));
        stages.push(Stage { risk: None, realizations: reals });
    }
    Problem {
        horizon: shape.horizon,
        dim: n,
        x0: (0..n).map(|_| round(r.gen_range(0.0..3.0))).collect(),
        form: Form::Lattice,
        stages,
        nodes: vec![],
        lower_value_bound: lower_bounds(&floors),
        risk,
    }
}

/// Tree with independent random data at every node (interstage dependent).
/// `risk_of(node_index)` picks each inner node's risk measure.
pub fn random_tree(seed: u64, shape: Shape, mut risk_of: impl FnMut(usize) -> Option<RiskSpec>) -> Problem {
    let mut r = rng(seed);
    let n = shape.dim;
    let mut nodes = Vec::new();
    let mut floors = vec![f64::INFINITY; shape.horizon];
    let mut frontier = vec![(None, 1.0)];
    for t in 1..=shape.horizon {
        let mut next = Vec::new();
        for (parent, prob) in frontier {
            let id = nodes.len() as i64 + 1;
            let data = random_stage(&mut r, t, n, prob, false);
            floors[t - 1] = floors[t - 1].min(cost_floor(&data));
            let risk = if t < shape.horizon { risk_of(nodes.len()) } else { None };
            nodes.push(TreeNode { id, parent, risk, data });
            if t < shape.horizon {
                for p in random_probs(&mut r, shape.branches) {
                    next.push((Some(id), p));
                }
            }
        }
        frontier = next;
    }
    Problem {
        horizon: shape.horizon,
        dim: n,
        x0: vec![1.0; n],
        form: Form::Tree,
        stages: vec![],
        nodes,
        lower_value_bound: lower_bounds(&floors),
        risk: None,
    }
}

/// The explicit tree of a lattice problem; node order matches the sampler's
/// child order so both forms draw the same paths.
pub fn lattice_as_tree(p: &Problem) -> Problem {
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut frontier: Vec<(Option<i64>, usize)> = vec![(None, 0)];
    for t in 1..=p.horizon {
        let mut next = Vec::new();
        for (parent, idx) in frontier {
            let id = nodes.len() as i64 + 1;
            let risk = p.stages.get(t).and_then(|s| s.risk.clone()).or_else(|| p.risk.clone());
            nodes.push(TreeNode { id, parent, risk: risk.filter(|_| t < p.horizon), data: p.stages[t - 1].realizations[idx].clone() });
            if t < p.horizon {
                for j in 0..p.stages[t].realizations.len() {
                    next.push((Some(id), j));
                }
            }
        }
        frontier = next;
    }
    Problem { form: Form::Tree, stages: vec![], nodes, risk: None, ..p.clone() }
}

pub fn risk_rotation(i: usize) -> RiskSpec {
    match i % 4 {
        0 => RiskSpec::Cvar { epsilon: 0.25 },
        1 => RiskSpec::Cvar { epsilon: 0.5 },
        2 => RiskSpec::Mixture { lambda: 0.3, epsilon: 0.25 },
        _ => RiskSpec::Mixture { lambda: 0.6, epsilon: 0.5 },
    }
}
