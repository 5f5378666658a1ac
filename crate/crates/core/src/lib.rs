//! Numerical laboratory for homogenization of viscous Hamilton-Jacobi
//! equations in stationary random environments.

pub mod cli;
pub mod convexanalysis;
pub mod environment;
pub mod error;
pub mod gridio;
pub mod hjsolver;
pub mod homogenize;
pub mod lattice;
pub mod ldp;
pub mod linalg;
pub mod numerics;

pub use error::{Error, Result};
