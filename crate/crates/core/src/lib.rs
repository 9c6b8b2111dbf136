//! Topology and line-parameter estimation for power distribution grids.
//!
//! The admittance matrix `Y = G − jB̃` is recovered from voltage and power
//! injection samples by minimizing a model-dependent negative log-likelihood
//! with sparsity penalties over the set of real Laplacians.

pub mod alm;
pub mod datagen;
pub mod error;
pub mod io;
pub mod lapcore;
pub mod linalg;
pub mod models;
pub mod oracle;

pub use error::{Error, Result};
