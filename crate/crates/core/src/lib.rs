//! Differentiable Monte Carlo acquisition functions for batch Bayesian
//! optimization over a Gaussian process surrogate.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod harness;
pub mod maximize;
pub mod reparam;
pub mod stream;
pub mod tasks;
pub mod verification;

pub use error::{Error, Result};
