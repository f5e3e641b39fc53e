//! Scalar abstraction for the linear-algebra and propagation layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real floating-point type underlying the complex arithmetic (f32 or f64).
///
/// The tolerances are per-type: the f64 values are the ones the library is
/// calibrated for, the f32 values are loosened to what single precision can
/// actually resolve.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Threshold for sign tests (rates, eigenvalues).
    fn sign_eps() -> Self;
    /// Maximum allowed `|m - m†|` entry for a matrix to count as hermitian.
    fn hermitian_tol() -> Self;
    /// Norms at or below this are treated as zero vectors.
    fn zero_norm() -> Self;
    /// Convergence target for Jacobi sweeps, relative to the matrix norm.
    fn jacobi_tol() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Real for f64 {
    fn sign_eps() -> Self {
        1e-12
    }
    fn hermitian_tol() -> Self {
        1e-9
    }
    fn zero_norm() -> Self {
        1e-14
    }
    fn jacobi_tol() -> Self {
        1e-14
    }
}

impl Real for f32 {
    fn sign_eps() -> Self {
        1e-6
    }
    fn hermitian_tol() -> Self {
        1e-4
    }
    fn zero_norm() -> Self {
        1e-7
    }
    fn jacobi_tol() -> Self {
        1e-7
    }
}
