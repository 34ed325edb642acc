//! Risk-averse stochastic dual dynamic programming on finite scenario trees.
//!
//! The crate solves multistage stochastic linear programs whose stage costs
//! are aggregated by coherent risk measures (expectation, CVaR, mixtures, or
//! any polyhedral dual set). Recourse functions are approximated from below
//! by cutting planes built along sampled scenario paths:
//!
//! * [`engine`] runs the sampled algorithms (shared per-stage cuts, feasibility
//!   cuts with backtracking, per-node cuts on explicit trees);
//! * [`oracle`] solves small instances exactly for verification;
//! * [`lp`] is the dense simplex solver everything is built on.
//!
//! Numerical kernels ([`lp`], [`risk`], [`cuts`]) are generic over
//! [`scalar::Scalar`]; the aliases below fix them to `f64`, which is what the
//! engine uses.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cuts;
pub mod engine;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod scalar;
pub mod valuefn;

pub use engine::{run, Algorithm, CutTiming, OracleCheck, RunConfig, RunResult, RunStatus};
pub use model::{validate_problem, Problem};
pub use risk::RiskSpec;

pub type LpProblem = lp::LpProblem<f64>;
pub type LpSolution = lp::LpSolution<f64>;
pub type CutPool = cuts::CutPool<f64>;
pub type OptimalityCut = cuts::OptimalityCut<f64>;
pub type FeasibilityCut = cuts::FeasibilityCut<f64>;
