//! Sparse Legendre approximation of high-dimensional holomorphic functions
//! from random samples, and tanh network emulations of the learned
//! polynomials.

// `!(x > 0.0)` is how NaN inputs are rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dnn;
pub mod error;
pub mod fem1d;
pub mod legendre;
pub mod measurement;
pub mod model;
pub mod multiindex;
pub mod oracles;
pub mod solver;

pub use error::{Error, Result};
pub use model::TargetFunction;
pub use multiindex::{IndexSet, MultiIndex, WeightVector};
