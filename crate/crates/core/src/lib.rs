//! Stochastic pure-state unravelings of time-local master equations.
//!
//! The linear algebra, generator and reference propagator are generic over
//! the real scalar type (`f32` or `f64`); the stochastic layers run in `f64`.

pub mod ensemble;
pub mod error;
pub mod extended;
pub mod linalg;
pub mod local;
pub mod master_equation;
pub mod models;
pub mod propagator;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ComplexMatrix = linalg::Matrix<f64>;
pub type PureState = linalg::Ket<f64>;
pub type DensityMatrix = linalg::Density<f64>;
pub type MasterEquation = master_equation::Generator<f64>;
pub type FrozenGenerator = master_equation::Snapshot<f64>;
pub type TimeGrid = propagator::TimeGrid<f64>;

pub type ComplexMatrix32 = linalg::Matrix<f32>;
pub type PureState32 = linalg::Ket<f32>;
pub type DensityMatrix32 = linalg::Density<f32>;
pub type MasterEquation32 = master_equation::Generator<f32>;
