//! Floating-point abstraction shared by the numerical kernels.
//!
//! The LP solver, the risk measures and the cut pools are written once over
//! [`Scalar`] and instantiated for `f64` (the engine's working precision) and
//! `f32` (useful for quick experiments; tolerances are loosened accordingly).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Real scalar type accepted by the generic kernels.
pub trait Scalar:
    Float + FromPrimitive + NumCast + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Absolute tolerance on primal residuals and reduced costs.
    fn feas_tol() -> Self;
    /// Smallest pivot magnitude accepted in ratio tests and factorizations.
    fn pivot_tol() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn feas_tol() -> Self {
        1e-9
    }
    fn pivot_tol() -> Self {
        1e-11
    }
}

impl Scalar for f32 {
    fn feas_tol() -> Self {
        1e-4
    }
    fn pivot_tol() -> Self {
        1e-6
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
