//! Dense bounded-variable primal simplex.
//!
//! The solver works on
//!
//! ```text
//! minimize    c'y
//! subject to  E y  = e
//!             F y <= f
//!             l <= y <= u
//! ```
//!
//! Every row owns a logical column (bounds `[0, 0]` for equalities and
//! `[0, inf)` for inequalities) and an artificial column used only during
//! phase one. A basis therefore consists of unit columns plus a (small) set of
//! structural columns; solves with the basis reduce to a dense system over the
//! basic structurals and the rows not covered by a basic unit column. The
//! engine's subproblems have a handful of structurals and possibly hundreds of
//! cut rows, which this layout handles cheaply.
//!
//! Dual sign convention: for the optimal value `v(e, f)`,
//! `dual_eq` is a subgradient of `v` in `e` (`v(e + d) >= v(e) + <dual_eq, d>`)
//! and `dual_ineq >= 0` satisfies `v(e, f + d) >= v(e, f) - <dual_ineq, d>`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("NaN in LP data ({0})")]
    NotANumber(&'static str),
    #[error("variable {var} has lower bound above upper bound")]
    InvertedBounds { var: usize },
    #[error("simplex failed after {pivots} pivots: {reason}")]
    NumericalFailure { pivots: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem<T> {
    pub cost: Vec<T>,
    pub eq_rows: Vec<Vec<T>>,
    pub eq_rhs: Vec<T>,
    pub le_rows: Vec<Vec<T>>,
    pub le_rhs: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> LpProblem<T> {
    /// Problem with `num_vars` nonnegative variables, zero cost and no rows.
    pub fn new(num_vars: usize) -> Self {
        Self {
            cost: vec![T::zero(); num_vars],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            le_rows: Vec::new(),
            le_rhs: Vec::new(),
            lower: vec![T::zero(); num_vars],
            upper: vec![T::infinity(); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_eq(&mut self, row: Vec<T>, rhs: T) -> usize {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_rows.len() - 1
    }

    pub fn add_le(&mut self, row: Vec<T>, rhs: T) -> usize {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
        self.le_rows.len() - 1
    }

    /// Adds `row . y >= rhs` as `-row . y <= -rhs`; returns the inequality index.
    pub fn add_ge(&mut self, row: Vec<T>, rhs: T) -> usize {
        self.add_le(row.into_iter().map(|a| -a).collect(), -rhs)
    }

    pub fn set_bounds(&mut self, var: usize, lower: T, upper: T) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{} costs but {} lower / {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.le_rows.len() != self.le_rhs.len() {
            return Err(LpError::Dimension("row count differs from rhs length".into()));
        }
        for row in self.eq_rows.iter().chain(&self.le_rows) {
            if row.len() != n {
                return Err(LpError::Dimension(format!(
                    "row of length {} for {} variables",
                    row.len(),
                    n
                )));
            }
            if row.iter().any(|a| a.is_nan()) {
                return Err(LpError::NotANumber("constraint matrix"));
            }
        }
        if self.cost.iter().any(|c| c.is_nan()) {
            return Err(LpError::NotANumber("cost"));
        }
        if self.eq_rhs.iter().chain(&self.le_rhs).any(|b| !b.is_finite()) {
            return Err(LpError::NotANumber("right-hand side"));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::NotANumber("bounds"));
            }
            if self.lower[j] > self.upper[j] {
                return Err(LpError::InvertedBounds { var: j });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective: T,
    pub dual_eq: Vec<T>,
    pub dual_ineq: Vec<T>,
    /// Reduced costs of the structural variables.
    pub reduced_costs: Vec<T>,
    pub active_ineq: Vec<bool>,
    /// Structural variables in the final basis.
    pub basic_vars: Vec<usize>,
    pub pivots: usize,
}

impl<T: Scalar> LpSolution<T> {
    fn empty(status: LpStatus, pivots: usize) -> Self {
        let objective = match status {
            LpStatus::Unbounded => T::neg_infinity(),
            _ => T::infinity(),
        };
        Self {
            status,
            x: Vec::new(),
            objective,
            dual_eq: Vec::new(),
            dual_ineq: Vec::new(),
            reduced_costs: Vec::new(),
            active_ineq: Vec::new(),
            basic_vars: Vec::new(),
            pivots,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Lagrangian dual objective `e'dual_eq - f'dual_ineq + sum_j bound terms`.
    pub fn dual_objective(&self, p: &LpProblem<T>) -> T {
        let mut v: T = p.eq_rhs.iter().zip(&self.dual_eq).map(|(&b, &y)| b * y).sum();
        v -= p.le_rhs.iter().zip(&self.dual_ineq).map(|(&b, &y)| b * y).sum();
        for (j, &d) in self.reduced_costs.iter().enumerate() {
            if d > T::zero() {
                v += d * p.lower[j];
            } else if d < T::zero() {
                v += d * p.upper[j];
            }
        }
        v
    }

    /// Plain-text dump of status, basis and duals.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status {:?} objective {} pivots {}", self.status, self.objective, self.pivots);
        let _ = writeln!(s, "basic {:?}", self.basic_vars);
        for (j, v) in self.x.iter().enumerate() {
            let _ = writeln!(s, "x[{j}] = {v}  d = {}", self.reduced_costs.get(j).copied().unwrap_or_default());
        }
        for (i, y) in self.dual_eq.iter().enumerate() {
            let _ = writeln!(s, "eq[{i}] dual {y}");
        }
        for (i, y) in self.dual_ineq.iter().enumerate() {
            let _ = writeln!(s, "le[{i}] dual {y} active {}", self.active_ineq[i]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Largest reduced cost, switching to Bland's rule after a run of
    /// degenerate pivots.
    Dantzig,
    Bland,
}

/// Simplex driver. Holds pivoting configuration and statistics of the last
/// solve; one instance per worker.
#[derive(Debug, Clone)]
pub struct Solver {
    pub rule: PivotRule,
    /// Consecutive degenerate pivots tolerated before falling back to Bland.
    pub stall_limit: usize,
    pub last_pivots: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Self { rule: PivotRule::Dantzig, stall_limit: 50, last_pivots: 0 }
    }
}

impl Solver {
    pub fn bland() -> Self {
        Self { rule: PivotRule::Bland, ..Self::default() }
    }

    pub fn solve<T: Scalar>(&mut self, p: &LpProblem<T>) -> Result<LpSolution<T>, LpError> {
        p.validate()?;
        let mut simplex = Simplex::new(p);
        let sol = simplex.run(self.rule, self.stall_limit)?;
        self.last_pivots = sol.pivots;
        Ok(sol)
    }
}

pub fn solve<T: Scalar>(p: &LpProblem<T>) -> Result<LpSolution<T>, LpError> {
    Solver::default().solve(p)
}

pub fn solve_with_bland<T: Scalar>(p: &LpProblem<T>) -> Result<LpSolution<T>, LpError> {
    Solver::bland().solve(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    Lower,
    Upper,
    /// Nonbasic free variable held at zero.
    Zero,
}

/// LU factorization with partial pivoting of a small dense square matrix.
struct DenseLu<T> {
    k: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> DenseLu<T> {
    fn factor(mut a: Vec<T>, k: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..k).collect();
        for c in 0..k {
            let mut best = c;
            let mut best_abs = a[c * k + c].abs();
            for r in c + 1..k {
                let v = a[r * k + c].abs();
                if v > best_abs {
                    best = r;
                    best_abs = v;
                }
            }
            if best_abs <= T::pivot_tol() * T::lit(1e-3) {
                return None;
            }
            if best != c {
                for j in 0..k {
                    a.swap(c * k + j, best * k + j);
                }
                perm.swap(c, best);
            }
            let piv = a[c * k + c];
            for r in c + 1..k {
                let f = a[r * k + c] / piv;
                a[r * k + c] = f;
                if f != T::zero() {
                    for j in c + 1..k {
                        let u = a[c * k + j];
                        a[r * k + j] -= f * u;
                    }
                }
            }
        }
        Some(Self { k, lu: a, perm })
    }

    /// Solves `A x = b`.
    fn solve(&self, b: &[T]) -> Vec<T> {
        let k = self.k;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..k {
            let mut s = y[r];
            for j in 0..r {
                s -= self.lu[r * k + j] * y[j];
            }
            y[r] = s;
        }
        for r in (0..k).rev() {
            let mut s = y[r];
            for j in r + 1..k {
                s -= self.lu[r * k + j] * y[j];
            }
            y[r] = s / self.lu[r * k + r];
        }
        y
    }

    /// Solves `A' x = b`.
    fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let k = self.k;
        // A = P' L U  =>  A' = U' L' P
        let mut z = b.to_vec();
        for r in 0..k {
            let mut s = z[r];
            for j in 0..r {
                s -= self.lu[j * k + r] * z[j];
            }
            z[r] = s / self.lu[r * k + r];
        }
        for r in (0..k).rev() {
            let mut s = z[r];
            for j in r + 1..k {
                s -= self.lu[j * k + r] * z[j];
            }
            z[r] = s;
        }
        let mut x = vec![T::zero(); k];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

struct Simplex<'a, T> {
    n: usize,
    m: usize,
    m_eq: usize,
    rows: Vec<&'a [T]>,
    rhs: Vec<T>,
    /// Column-major copy of the structural part.
    cols: Vec<Vec<T>>,
    cost: &'a [T],
    sigma: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    x: Vec<T>,
    state: Vec<VarState>,
    /// Basic unit column (logical or artificial) covering each row.
    row_unit: Vec<Option<usize>>,
    basic_struct: Vec<usize>,
    uncovered: Vec<usize>,
    lu: Option<DenseLu<T>>,
    pivots: usize,
}

impl<'a, T: Scalar> Simplex<'a, T> {
    fn new(p: &'a LpProblem<T>) -> Self {
        let n = p.num_vars();
        let m_eq = p.eq_rows.len();
        let m = m_eq + p.le_rows.len();
        let rows: Vec<&[T]> = p.eq_rows.iter().chain(&p.le_rows).map(|r| r.as_slice()).collect();
        let rhs: Vec<T> = p.eq_rhs.iter().chain(&p.le_rhs).copied().collect();
        let mut cols = vec![vec![T::zero(); m]; n];
        for (i, row) in rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                cols[j][i] = a;
            }
        }
        let total = n + 2 * m;
        let mut lo = vec![T::zero(); total];
        let mut hi = vec![T::zero(); total];
        lo[..n].copy_from_slice(&p.lower);
        hi[..n].copy_from_slice(&p.upper);
        for i in 0..m {
            hi[n + i] = if i < m_eq { T::zero() } else { T::infinity() };
            hi[n + m + i] = T::infinity();
        }
        Self {
            n,
            m,
            m_eq,
            rows,
            rhs,
            cols,
            cost: &p.cost,
            sigma: vec![T::one(); m],
            lo,
            hi,
            x: vec![T::zero(); total],
            state: vec![VarState::Lower; total],
            row_unit: vec![None; m],
            basic_struct: Vec::new(),
            uncovered: Vec::new(),
            lu: None,
            pivots: 0,
        }
    }

    fn logical(&self, i: usize) -> usize {
        self.n + i
    }

    fn artificial(&self, i: usize) -> usize {
        self.n + self.m + i
    }

    fn is_artificial(&self, v: usize) -> bool {
        v >= self.n + self.m
    }

    /// Row index of a unit column.
    fn unit_row(&self, v: usize) -> usize {
        debug_assert!(v >= self.n);
        (v - self.n) % self.m
    }

    fn unit_coef(&self, v: usize) -> T {
        if self.is_artificial(v) {
            self.sigma[self.unit_row(v)]
        } else {
            T::one()
        }
    }

    fn column(&self, v: usize) -> Vec<T> {
        if v < self.n {
            self.cols[v].clone()
        } else {
            let mut c = vec![T::zero(); self.m];
            c[self.unit_row(v)] = self.unit_coef(v);
            c
        }
    }

    fn initial_basis(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        for j in 0..n {
            let (l, u) = (self.lo[j], self.hi[j]);
            if l.is_finite() {
                self.x[j] = l;
                self.state[j] = VarState::Lower;
            } else if u.is_finite() {
                self.x[j] = u;
                self.state[j] = VarState::Upper;
            } else {
                self.x[j] = T::zero();
                self.state[j] = VarState::Zero;
            }
        }
        let crashed = self.crash();
        let mut needs_phase_one = false;
        for i in 0..m {
            if crashed[i] {
                let (lg, ar) = (self.logical(i), self.artificial(i));
                self.x[lg] = T::zero();
                self.state[lg] = VarState::Lower;
                self.x[ar] = T::zero();
                self.state[ar] = VarState::Lower;
                continue;
            }
            let r = self.rhs[i] - (0..n).map(|j| self.rows[i][j] * self.x[j]).sum::<T>();
            let (ls, us) = (self.lo[n + i], self.hi[n + i]);
            let s = r.max(ls).min(us);
            let resid = r - s;
            let (lg, ar) = (self.logical(i), self.artificial(i));
            if resid == T::zero() {
                self.x[lg] = s;
                self.state[lg] = VarState::Basic;
                self.row_unit[i] = Some(lg);
                self.x[ar] = T::zero();
                self.state[ar] = VarState::Lower;
            } else {
                needs_phase_one = true;
                self.sigma[i] = resid.signum();
                self.x[ar] = resid.abs();
                self.state[ar] = VarState::Basic;
                self.row_unit[i] = Some(ar);
                self.x[lg] = s;
                self.state[lg] = if s == us && s != ls { VarState::Upper } else { VarState::Lower };
            }
        }
        needs_phase_one
    }

    /// Makes columns that can grow without bound basic in the inequality
    /// row they relieve most (epigraph variables under a set of cuts), so
    /// those rows need no artificials. Returns the rows now covered by a
    /// structural column.
    fn crash(&mut self) -> Vec<bool> {
        let (n, m) = (self.n, self.m);
        let mut covered = vec![false; m];
        for j in 0..n {
            if self.hi[j].is_finite() {
                continue;
            }
            let mut best: Option<(usize, T)> = None;
            for i in self.m_eq..m {
                let a = self.cols[j][i];
                if covered[i] || a >= -T::pivot_tol() {
                    continue;
                }
                let act: T = (0..n).map(|c| self.rows[i][c] * self.x[c]).sum();
                let excess = act - self.rhs[i];
                if excess > T::zero() {
                    let step = excess / -a;
                    if best.is_none_or(|(_, b)| step > b) {
                        best = Some((i, step));
                    }
                }
            }
            if let Some((i, step)) = best {
                self.x[j] += step;
                self.state[j] = VarState::Basic;
                self.row_unit[i] = None;
                covered[i] = true;
            }
        }
        covered
    }

    fn refresh_basis(&mut self) -> Result<(), LpError> {
        self.basic_struct = (0..self.n).filter(|&j| self.state[j] == VarState::Basic).collect();
        self.uncovered = (0..self.m).filter(|&i| self.row_unit[i].is_none()).collect();
        let k = self.basic_struct.len();
        if k != self.uncovered.len() {
            return Err(self.failure(format!(
                "basis bookkeeping broken: {} basic structurals, {} uncovered rows",
                k,
                self.uncovered.len()
            )));
        }
        if k == 0 {
            self.lu = None;
            return Ok(());
        }
        let mut a = vec![T::zero(); k * k];
        for (r, &i) in self.uncovered.iter().enumerate() {
            for (c, &j) in self.basic_struct.iter().enumerate() {
                a[r * k + c] = self.cols[j][i];
            }
        }
        match DenseLu::factor(a, k) {
            Some(lu) => {
                self.lu = Some(lu);
                Ok(())
            }
            None => Err(self.failure("singular basis".into())),
        }
    }

    fn failure(&self, reason: String) -> LpError {
        LpError::NumericalFailure { pivots: self.pivots, reason }
    }

    /// Solves `B w = r`; returns `w` indexed by variable (zero for nonbasics).
    fn basis_solve(&self, r: &[T]) -> Vec<T> {
        let mut w = vec![T::zero(); self.n + 2 * self.m];
        let k = self.basic_struct.len();
        let mut xs = Vec::new();
        if k > 0 {
            let rp: Vec<T> = self.uncovered.iter().map(|&i| r[i]).collect();
            xs = self.lu.as_ref().expect("factorized basis").solve(&rp);
            for (c, &j) in self.basic_struct.iter().enumerate() {
                w[j] = xs[c];
            }
        }
        for i in 0..self.m {
            if let Some(u) = self.row_unit[i] {
                let mut s = r[i];
                for (c, &j) in self.basic_struct.iter().enumerate() {
                    s -= self.cols[j][i] * xs[c];
                }
                w[u] = s / self.unit_coef(u);
            }
        }
        w
    }

    /// Row multipliers `y` with `y' B = c_B'`.
    fn duals(&self, cost: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.m];
        for i in 0..self.m {
            if let Some(u) = self.row_unit[i] {
                y[i] = cost[u] / self.unit_coef(u);
            }
        }
        if !self.basic_struct.is_empty() {
            let rhs: Vec<T> = self
                .basic_struct
                .iter()
                .map(|&j| {
                    let mut s = cost[j];
                    for i in 0..self.m {
                        if self.row_unit[i].is_some() {
                            s -= y[i] * self.cols[j][i];
                        }
                    }
                    s
                })
                .collect();
            let yp = self.lu.as_ref().expect("factorized basis").solve_transpose(&rhs);
            for (r, &i) in self.uncovered.iter().enumerate() {
                y[i] = yp[r];
            }
        }
        y
    }

    fn reduced_cost(&self, v: usize, cost: &[T], y: &[T]) -> T {
        if v < self.n {
            cost[v] - self.cols[v].iter().zip(y).map(|(&a, &yi)| a * yi).sum::<T>()
        } else {
            let i = self.unit_row(v);
            cost[v] - self.unit_coef(v) * y[i]
        }
    }

    fn recompute_primal(&mut self) {
        let mut r = self.rhs.clone();
        for v in 0..self.n + 2 * self.m {
            if self.state[v] == VarState::Basic || self.x[v] == T::zero() {
                continue;
            }
            if v < self.n {
                for (ri, &a) in r.iter_mut().zip(&self.cols[v]) {
                    *ri -= a * self.x[v];
                }
            } else {
                let i = self.unit_row(v);
                r[i] -= self.unit_coef(v) * self.x[v];
            }
        }
        let w = self.basis_solve(&r);
        for v in 0..self.n + 2 * self.m {
            if self.state[v] == VarState::Basic {
                self.x[v] = w[v];
            }
        }
    }

    /// Runs simplex pivots for the given cost vector. Returns `false` when the
    /// objective is unbounded below.
    fn optimize(&mut self, cost: &[T], rule: PivotRule, stall_limit: usize) -> Result<bool, LpError> {
        let total = self.n + 2 * self.m;
        let tol = T::feas_tol();
        let ptol = T::pivot_tol();
        let max_pivots = 1000 + 100 * total;
        let mut bland = rule == PivotRule::Bland;
        let mut degenerate_run = 0usize;
        loop {
            self.refresh_basis()?;
            self.recompute_primal();
            let y = self.duals(cost);

            // pricing
            let mut entering: Option<(usize, T, T)> = None; // (var, direction, |d|)
            for v in 0..total {
                let st = self.state[v];
                if st == VarState::Basic || self.lo[v] == self.hi[v] {
                    continue;
                }
                let d = self.reduced_cost(v, cost, &y);
                let dir = match st {
                    VarState::Lower if d < -tol => T::one(),
                    VarState::Upper if d > tol => -T::one(),
                    VarState::Zero if d < -tol => T::one(),
                    VarState::Zero if d > tol => -T::one(),
                    _ => continue,
                };
                let score = d.abs();
                let better = match entering {
                    None => true,
                    Some((_, _, best)) => !bland && score > best,
                };
                if better {
                    entering = Some((v, dir, score));
                    if bland {
                        break;
                    }
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(true);
            };

            if self.pivots >= max_pivots {
                return Err(self.failure("pivot limit reached".into()));
            }

            // ratio test
            let w = self.basis_solve(&self.column(q));
            let mut step = if self.state[q] != VarState::Zero {
                self.hi[q] - self.lo[q]
            } else {
                T::infinity()
            };
            let mut leaving: Option<(usize, T)> = None; // (var, rate)
            for v in 0..total {
                if self.state[v] != VarState::Basic || w[v].abs() <= ptol {
                    continue;
                }
                let rate = -dir * w[v];
                let limit = if rate < T::zero() {
                    if !self.lo[v].is_finite() {
                        continue;
                    }
                    ((self.x[v] - self.lo[v]) / -rate).max(T::zero())
                } else {
                    if !self.hi[v].is_finite() {
                        continue;
                    }
                    ((self.hi[v] - self.x[v]) / rate).max(T::zero())
                };
                let tie_eps = T::lit(1e-12) * (T::one() + step.min(limit).abs());
                let take = if limit < step - tie_eps {
                    true
                } else if (limit - step).abs() <= tie_eps {
                    match leaving {
                        None => true,
                        Some((lv, lrate)) => {
                            if bland {
                                v < lv
                            } else {
                                rate.abs() > lrate.abs()
                            }
                        }
                    }
                } else {
                    false
                };
                if take {
                    step = step.min(limit);
                    leaving = Some((v, rate));
                }
            }
            if !step.is_finite() {
                return Ok(false);
            }

            self.pivots += 1;
            if step <= tol {
                degenerate_run += 1;
                if degenerate_run > stall_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            match leaving {
                None => {
                    // bound flip
                    if dir > T::zero() {
                        self.x[q] = self.hi[q];
                        self.state[q] = VarState::Upper;
                    } else {
                        self.x[q] = self.lo[q];
                        self.state[q] = VarState::Lower;
                    }
                }
                Some((lv, rate)) => {
                    self.x[q] += dir * step;
                    self.state[q] = VarState::Basic;
                    if rate < T::zero() || self.lo[lv] == self.hi[lv] {
                        self.x[lv] = self.lo[lv];
                        self.state[lv] = VarState::Lower;
                    } else {
                        self.x[lv] = self.hi[lv];
                        self.state[lv] = VarState::Upper;
                    }
                    if lv >= self.n {
                        let r = self.unit_row(lv);
                        self.row_unit[r] = None;
                    }
                    if q >= self.n {
                        let r = self.unit_row(q);
                        self.row_unit[r] = Some(q);
                    }
                }
            }
        }
    }

    fn run(&mut self, rule: PivotRule, stall_limit: usize) -> Result<LpSolution<T>, LpError> {
        let (n, m) = (self.n, self.m);
        let total = n + 2 * m;
        if self.initial_basis() {
            let mut phase_cost = vec![T::zero(); total];
            for c in phase_cost[n + m..].iter_mut() {
                *c = T::one();
            }
            self.optimize(&phase_cost, rule, stall_limit)?;
            self.recompute_primal();
            let infeas: T = (0..m).map(|i| self.x[self.artificial(i)]).sum();
            let scale = T::one() + self.rhs.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
            if infeas > T::feas_tol() * scale {
                return Ok(LpSolution::empty(LpStatus::Infeasible, self.pivots));
            }
        }
        for i in 0..m {
            let a = self.artificial(i);
            self.hi[a] = T::zero();
            if self.state[a] != VarState::Basic {
                self.x[a] = T::zero();
                self.state[a] = VarState::Lower;
            }
        }
        let mut cost = vec![T::zero(); total];
        cost[..n].copy_from_slice(self.cost);
        if !self.optimize(&cost, rule, stall_limit)? {
            return Ok(LpSolution::empty(LpStatus::Unbounded, self.pivots));
        }
        self.refresh_basis()?;
        self.recompute_primal();
        let y = self.duals(&cost);

        let x: Vec<T> = (0..n).map(|j| self.x[j].max(self.lo[j]).min(self.hi[j])).collect();
        let objective: T = x.iter().zip(self.cost).map(|(&a, &c)| a * c).sum();
        let reduced_costs: Vec<T> = (0..n).map(|j| self.reduced_cost(j, &cost, &y)).collect();
        let dual_eq = y[..self.m_eq].to_vec();
        let dual_ineq: Vec<T> = y[self.m_eq..].iter().map(|&v| (-v).max(T::zero())).collect();
        let active_ineq = (self.m_eq..m)
            .map(|i| {
                let lhs: T = self.rows[i].iter().zip(&x).map(|(&a, &xj)| a * xj).sum();
                self.rhs[i] - lhs <= T::feas_tol() * (T::one() + self.rhs[i].abs())
            })
            .collect();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            dual_eq,
            dual_ineq,
            reduced_costs,
            active_ineq,
            basic_vars: self.basic_struct.clone(),
            pivots: self.pivots,
        })
    }
}
