//! Riemann-Liouville fractional stochastic neutral differential equations:
//! Mittag-Leffler machinery, stability criteria and Monte Carlo simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod coefficients;
pub mod complex;
pub mod cli;
pub mod criteria;
pub mod error;
pub mod fraccalc;
pub mod grid;
pub mod linalg;
pub mod moments;
pub mod simulator;
pub mod spectral;

pub use error::{Error, Result};
