//! Special functions and discrete fractional operators.

mod contour;
pub mod gamma;
pub mod mittag_leffler;
pub mod operators;

use serde::{Deserialize, Serialize};

pub use gamma::{beta_fn, gamma_fn, ln_gamma, rgamma};
pub use mittag_leffler::{
    ml_matrix, ml_matrix_with, ml_real, ml_scalar, ml_scalar_branch, MLEvalPolicy, MatrixMethod,
    MlBranch, MlEval, MlWarning,
};
pub use operators::{product_weights, rl_derivative_grid, rl_integral_grid};

use crate::error::{Error, Result};

/// Fractional order α and moment order p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalOrder {
    pub alpha: f64,
    pub p: u32,
}

impl FractionalOrder {
    pub fn new(alpha: f64, p: u32) -> Result<Self> {
        let o = FractionalOrder { alpha, p };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (1/2, 1], got {}",
                self.alpha
            )));
        }
        if self.p < 2 {
            return Err(Error::Domain(format!("p must be an integer >= 2, got {}", self.p)));
        }
        Ok(())
    }

    pub fn p_f64(&self) -> f64 {
        self.p as f64
    }
}
