//! Hierarchical renormalization-group flow for integer-modulated Gaussian
//! fields: the DG model, sine-Gordon and the hard-core Coulomb gas.
//!
//! The crate computes the coefficient flow `lam_k`, the supercritical fixed
//! point, the variance and charge exponents, exact tree-chain observables,
//! Monte Carlo samples, and brute-force oracles for small systems.

pub mod chain;
pub mod cli;
pub mod error;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod quad;
pub mod rgflow;
pub mod sampler;

pub use error::{Error, Result};
