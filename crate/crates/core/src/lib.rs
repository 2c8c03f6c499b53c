//! Optimal sale of an indivisible asset by an agent with CRRA utility who may
//! also take fair gambles with the rest of their wealth.
//!
//! The crate provides the critical parameters of the solution, the piecewise
//! closed-form value functions for every regime, exact and path-level Monte
//! Carlo simulation of the optimal strategy, and finite-difference checks of
//! the variational inequalities the value functions must satisfy.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a < b)` also rejects NaN.

pub mod cli;
pub mod error;
pub mod model;
pub mod roots;
pub mod simulate;
pub mod thresholds;
pub mod valuefn;
pub mod verify;

pub use error::{Error, Result};
