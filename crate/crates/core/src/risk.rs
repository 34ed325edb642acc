//! Coherent risk measures given through their dual density sets.
//!
//! A measure is `rho(Z) = sup_{p in P} sum_j p_j phi_j z_j` with
//! `P` a subset of `{p >= 0, sum_j p_j phi_j = 1}`. Expectation, CVaR and their
//! mixtures are evaluated in closed form; an explicit polytope goes through the
//! LP solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpError, LpProblem, LpStatus};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeRow {
    /// Coefficients on the density vector; the row reads `a . p <= rhs`.
    pub a: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RiskSpec {
    #[default]
    Expectation,
    /// `CVaR` of level `1 - epsilon`: densities capped at `1 / epsilon`.
    Cvar { epsilon: f64 },
    /// `lambda * E + (1 - lambda) * CVaR_{1 - epsilon}`.
    Mixture { lambda: f64, epsilon: f64 },
    Polytope { rows: Vec<PolytopeRow> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("invalid risk parameter: {0}")]
    InvalidParameter(String),
    #[error("empty dual set")]
    EmptyDualSet,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskEvaluation<T> {
    pub value: T,
    pub density: Vec<T>,
}

impl RiskSpec {
    pub fn parse_short(s: &str) -> Result<Self, RiskError> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| RiskError::InvalidParameter(format!("not a number: {x}")))
        };
        let spec = match parts.as_slice() {
            ["expectation"] => RiskSpec::Expectation,
            ["cvar", eps] => RiskSpec::Cvar { epsilon: num(eps)? },
            ["mixture", lambda, eps] => RiskSpec::Mixture { lambda: num(lambda)?, epsilon: num(eps)? },
            _ => {
                return Err(RiskError::InvalidParameter(format!(
                    "expected expectation | cvar:EPS | mixture:LAMBDA:EPS, got {s}"
                )))
            }
        };
        let problems = spec.parameter_violations();
        if let Some(first) = problems.into_iter().next() {
            return Err(RiskError::InvalidParameter(first));
        }
        Ok(spec)
    }

    fn parameter_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let check_eps = |eps: f64, out: &mut Vec<String>| {
            if !(eps > 0.0 && eps <= 1.0) {
                out.push(format!("epsilon {eps} outside (0, 1]"));
            }
        };
        match self {
            RiskSpec::Expectation | RiskSpec::Polytope { .. } => {}
            RiskSpec::Cvar { epsilon } => check_eps(*epsilon, &mut out),
            RiskSpec::Mixture { lambda, epsilon } => {
                check_eps(*epsilon, &mut out);
                if !(0.0..=1.0).contains(lambda) {
                    out.push(format!("lambda {lambda} outside [0, 1]"));
                }
            }
        }
        out
    }
}

fn check_inputs<T: Scalar>(values: &[T], probs: &[T]) -> Result<(), RiskError> {
    if values.len() != probs.len() || values.is_empty() {
        return Err(RiskError::Dimension(format!(
            "{} values for {} probabilities",
            values.len(),
            probs.len()
        )));
    }
    Ok(())
}

fn cvar_density<T: Scalar>(values: &[T], probs: &[T], epsilon: T) -> Vec<T> {
    let m = values.len();
    if epsilon >= T::one() {
        return vec![T::one(); m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    // descending value, ascending index on ties
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let cap = T::one() / epsilon;
    let mut remaining = T::one();
    let mut p = vec![T::zero(); m];
    for j in order {
        if remaining <= T::zero() {
            break;
        }
        let full = probs[j] * cap;
        if full <= remaining {
            p[j] = cap;
            remaining -= full;
        } else {
            p[j] = remaining / probs[j];
            remaining = T::zero();
        }
    }
    p
}

fn weighted<T: Scalar>(values: &[T], probs: &[T], p: &[T]) -> T {
    values.iter().zip(probs).zip(p).map(|((&v, &f), &d)| d * f * v).sum()
}

/// Risk value and a maximizing density for `values` under `spec`.
pub fn risk_value_and_density<T: Scalar>(
    values: &[T],
    probs: &[T],
    spec: &RiskSpec,
) -> Result<RiskEvaluation<T>, RiskError> {
    check_inputs(values, probs)?;
    if let Some(v) = spec.parameter_violations().into_iter().next() {
        return Err(RiskError::InvalidParameter(v));
    }
    let density = match spec {
        RiskSpec::Expectation => vec![T::one(); values.len()],
        RiskSpec::Cvar { epsilon } => cvar_density(values, probs, T::lit(*epsilon)),
        RiskSpec::Mixture { lambda, epsilon } => {
            let lam = T::lit(*lambda);
            cvar_density(values, probs, T::lit(*epsilon))
                .into_iter()
                .map(|c| lam + (T::one() - lam) * c)
                .collect()
        }
        RiskSpec::Polytope { rows } => polytope_density(values, probs, rows)?,
    };
    let value = weighted(values, probs, &density);
    Ok(RiskEvaluation { value, density })
}

fn polytope_lp<T: Scalar>(values: &[T], probs: &[T], rows: &[PolytopeRow]) -> Result<LpProblem<T>, RiskError> {
    let m = values.len();
    let mut lp = LpProblem::new(m);
    lp.cost = values.iter().zip(probs).map(|(&v, &f)| -(v * f)).collect();
    lp.add_eq(probs.to_vec(), T::one());
    for (i, row) in rows.iter().enumerate() {
        if row.a.len() != m {
            return Err(RiskError::Dimension(format!(
                "polytope row {i} has {} coefficients for {m} outcomes",
                row.a.len()
            )));
        }
        lp.add_le(row.a.iter().map(|&a| T::lit(a)).collect(), T::lit(row.rhs));
    }
    Ok(lp)
}

fn polytope_density<T: Scalar>(values: &[T], probs: &[T], rows: &[PolytopeRow]) -> Result<Vec<T>, RiskError> {
    let lp = polytope_lp(values, probs, rows)?;
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.x),
        _ => Err(RiskError::EmptyDualSet),
    }
}

/// `CVaR_{1-epsilon}` through `min_u u + E[(Z - u)_+] / epsilon`, scanning the
/// support points (the minimum is attained at one of them).
pub fn cvar_by_minimization<T: Scalar>(values: &[T], probs: &[T], epsilon: T) -> T {
    values
        .iter()
        .map(|&u| {
            u + values
                .iter()
                .zip(probs)
                .map(|(&v, &f)| f * (v - u).max(T::zero()))
                .sum::<T>()
                / epsilon
        })
        .fold(T::infinity(), T::min)
}

/// Checks parameter ranges and nonemptiness of `P` intersected with the
/// density simplex. Boundedness needs no check: every `phi_j > 0`.
pub fn validate_risk_set(spec: &RiskSpec, probs: &[f64]) -> Vec<String> {
    let mut out = spec.parameter_violations();
    if let RiskSpec::Polytope { rows } = spec {
        let zeros = vec![0.0; probs.len()];
        match polytope_lp(&zeros, probs, rows) {
            Err(e) => out.push(e.to_string()),
            Ok(lp) => match lp::solve(&lp) {
                Ok(s) if s.status == LpStatus::Optimal => {}
                Ok(_) => out.push("empty dual set".into()),
                Err(e) => out.push(e.to_string()),
            },
        }
    }
    out
}
