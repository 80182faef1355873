//! Quantum-state steering on the Bloch sphere with obstacle-avoiding
//! Riemannian cubics, a Lie-group variational integrator on SU(2) and a
//! receding-horizon controller built on it.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cubic;
pub mod error;
pub mod lgvi;
pub mod mpc;
pub mod potential;
pub mod scenario;
pub mod sphere;
pub mod su2;

pub use error::{Error, Result};
