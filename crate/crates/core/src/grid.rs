use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid t_j = jΔ, j = 0..=N, with Δ = T/N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {t_end}")));
        }
        if n_steps < 2 {
            return Err(Error::Domain(format!("need at least 2 steps, got {n_steps}")));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// t_j; the last node is exactly T.
    pub fn node(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.t_end
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|j| self.node(j)).collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// The grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> TimeGrid {
        TimeGrid {
            t_end: self.t_end,
            n_steps: self.n_steps * factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let g = TimeGrid::new(1.5, 7).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 8);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[7], 1.5);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
    }
}
