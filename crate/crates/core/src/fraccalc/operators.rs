//! Riemann-Liouville integral and derivative on uniform grids.

use super::gamma::gamma_fn;
use crate::error::{Error, Result};

/// Exact integrals of the kernel (t_n - τ)^{α-1} over one step, indexed by
/// the lag k = n - j: Δ^α/α (k^α - (k-1)^α), for k = 1..=n_max.
pub fn product_weights(dt: f64, alpha: f64, n_max: usize) -> Vec<f64> {
    let scale = dt.powf(alpha) / alpha;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(0.0);
    let mut prev = 0.0;
    for k in 1..=n_max {
        let cur = (k as f64).powf(alpha);
        out.push(scale * (cur - prev));
        prev = cur;
    }
    out
}

fn check_samples(samples: &[Vec<f64>], dt: f64, alpha: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("grid step must be positive, got {dt}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let dim = samples.first().map_or(0, Vec::len);
    if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
        return Err(Error::Shape(format!(
            "sample {bad} has length {}, expected {dim}",
            samples[bad].len()
        )));
    }
    Ok(dim)
}

/// I^α f at each node by left-value product integration. Node 0 is zero.
pub fn rl_integral_grid(samples: &[Vec<f64>], dt: f64, alpha: f64) -> Result<Vec<Vec<f64>>> {
    let dim = check_samples(samples, dt, alpha)?;
    let n = samples.len();
    let g = gamma_fn(alpha)?;
    let w = product_weights(dt, alpha, n.saturating_sub(1));
    let mut out = vec![vec![0.0; dim]; n];
    for (i, row) in out.iter_mut().enumerate().skip(1) {
        for j in 0..i {
            let wk = w[i - j] / g;
            for (o, f) in row.iter_mut().zip(&samples[j]) {
                *o += wk * f;
            }
        }
    }
    Ok(out)
}

/// D^α f = d/dt I^{1-α} f, with a first-order backward difference. Node 0
/// repeats node 1.
pub fn rl_derivative_grid(samples: &[Vec<f64>], dt: f64, alpha: f64) -> Result<Vec<Vec<f64>>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if samples.len() < 3 {
        return Err(Error::Shape("derivative needs at least 3 grid nodes".into()));
    }
    let j = rl_integral_grid(samples, dt, 1.0 - alpha)?;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(j.len());
    out.push(Vec::new());
    for i in 1..j.len() {
        out.push(j[i].iter().zip(&j[i - 1]).map(|(a, b)| (a - b) / dt).collect());
    }
    out[0] = out[1].clone();
    Ok(out)
}
