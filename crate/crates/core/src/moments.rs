//! Empirical pth-moment curves, the weighted H-norm, decay fits and the
//! moment-stability verdicts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::PathEnsemble;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
/// Smallest path count for which confidence half-widths are reported.
pub const MIN_PATHS_FOR_CI: usize = 30;
const FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub nodes: Vec<f64>,
    /// Sample mean of ‖X(t_j)‖^p (or of the weighted values).
    pub m: Vec<f64>,
    /// 95% normal half-widths, present when n_paths ≥ 30.
    pub half_width: Option<Vec<f64>>,
    pub p: u32,
    pub n_paths: usize,
    pub weighted: bool,
}

impl MomentCurve {
    pub fn sup(&self) -> f64 {
        self.m.iter().copied().fold(0.0, f64::max)
    }

    /// Mean of m over nodes with t ≥ t_from.
    pub fn tail_mean(&self, t_from: f64) -> f64 {
        let tail: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.m)
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, m)| *m)
            .collect();
        if tail.is_empty() {
            return f64::NAN;
        }
        pairwise_sum(&tail) / tail.len() as f64
    }

    /// CSV `t,m,ci_half_width`; the last column is empty without a CI.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,m,ci_half_width")?;
        for (j, (t, m)) in self.nodes.iter().zip(&self.m).enumerate() {
            match &self.half_width {
                Some(h) => writeln!(w, "{t:.16e},{m:.16e},{:.16e}", h[j])?,
                None => writeln!(w, "{t:.16e},{m:.16e},")?,
            }
        }
        Ok(())
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2..=8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn euclid_pow(x: &[f64], p: u32) -> f64 {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    match p {
        2 => n2,
        _ => n2.sqrt().powi(p as i32),
    }
}

fn node_stats(samples: &[f64], with_ci: bool) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    if !with_ci {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// pth moment at one node. Unweighted moments do not exist at node 0.
pub fn moment_at(ens: &PathEnsemble, node: usize, p: u32, weighted: bool) -> Result<(f64, f64)> {
    if node > ens.grid.n_steps {
        return Err(Error::Domain(format!("node {node} beyond grid end")));
    }
    if !weighted && node == 0 {
        return Err(Error::Domain(
            "X(0) is not finite; only the weighted moment exists at node 0".into(),
        ));
    }
    let samples: Vec<f64> = (0..ens.n_paths)
        .map(|i| {
            let x = if weighted {
                ens.weighted(i, node)
            } else {
                ens.value(i, node).expect("node > 0")
            };
            euclid_pow(x, p)
        })
        .collect();
    Ok(node_stats(&samples, ens.n_paths >= MIN_PATHS_FOR_CI))
}

/// Moment curve over the grid: nodes 0..=N when `weighted`, 1..=N otherwise.
pub fn pth_moment_curve(ens: &PathEnsemble, p: u32, weighted: bool) -> Result<MomentCurve> {
    if p == 0 {
        return Err(Error::Domain("moment order must be positive".into()));
    }
    let first = if weighted { 0 } else { 1 };
    let with_ci = ens.n_paths >= MIN_PATHS_FOR_CI;
    let mut nodes = Vec::new();
    let mut m = Vec::new();
    let mut hw = Vec::new();
    for j in first..=ens.grid.n_steps {
        let (mean, h) = moment_at(ens, j, p, weighted)?;
        nodes.push(ens.grid.node(j));
        m.push(mean);
        hw.push(h);
    }
    Ok(MomentCurve {
        nodes,
        m,
        half_width: with_ci.then_some(hw),
        p,
        n_paths: ens.n_paths,
        weighted,
    })
}

/// sup_j E‖t_j^{1−α} X(t_j)‖^p over the simulated horizon.
pub fn h_norm(ens: &PathEnsemble, p: u32) -> Result<f64> {
    Ok(pth_moment_curve(ens, p, true)?.sup())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Exponent of the least-squares fit m ≈ c t^slope.
    pub slope: f64,
    /// 95% interval from the regression standard error.
    pub slope_ci: (f64, f64),
    pub window: (f64, f64),
}

/// log m against log t over the trailing `window_fraction` of nodes.
pub fn decay_fit(curve: &MomentCurve, window_fraction: f64) -> Result<DecayFit> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "window_fraction must lie in (0, 1), got {window_fraction}"
        )));
    }
    let len = curve.nodes.len();
    let count = ((len as f64) * window_fraction).ceil() as usize;
    let pts: Vec<(f64, f64)> = curve.nodes[len - count.min(len)..]
        .iter()
        .zip(&curve.m[len - count.min(len)..])
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, m)| (t.ln(), m.max(FLOOR).ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Domain(format!(
            "degenerate fit: {} window nodes, need at least 4",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mx = pairwise_sum(&xs) / n;
    let my = pairwise_sum(&ys) / n;
    let sxx = pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&pts.iter().map(|(x, y)| (x - mx) * (y - my)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::Domain("degenerate fit: window has a single time".into()));
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss = pairwise_sum(&pts.iter().map(|(x, y)| (y - icpt - slope * x).powi(2)).collect::<Vec<_>>());
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit {
        slope,
        slope_ci: (slope - Z95 * se, slope + Z95 * se),
        window: (pts[0].0.exp(), pts[pts.len() - 1].0.exp()),
    })
}

/// Moment curves of one initial datum.
#[derive(Clone, Debug, PartialEq)]
pub struct DatumCurves {
    pub rho_norm: f64,
    /// Weighted curve, used for the boundedness check (the unweighted one
    /// is unbounded near t = 0).
    pub weighted: MomentCurve,
    /// Unweighted curve, used for decay.
    pub unweighted: MomentCurve,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub epsilon: f64,
    pub delta: f64,
    pub tail_tol: f64,
    pub window_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayVerdict {
    /// Largest fitted tail slope over the data.
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub sup_moment: f64,
    pub tail_mean: f64,
    pub stable_p: bool,
    pub asymptotically_stable_p: bool,
    pub window: (f64, f64),
}

impl DecayVerdict {
    pub fn report(&self) -> String {
        format!(
            "slope = {:.16e}\nslope_ci_low = {:.16e}\nslope_ci_high = {:.16e}\nwindow_start = {:.16e}\nwindow_end = {:.16e}\nsup_weighted_moment = {:.16e}\ntail_mean = {:.16e}\nstable_p = {}\nasymptotically_stable_p = {}\nhorizon_note = suprema and limits are taken over the simulated horizon\n",
            self.slope,
            self.slope_ci.0,
            self.slope_ci.1,
            self.window.0,
            self.window.1,
            self.sup_moment,
            self.tail_mean,
            self.stable_p,
            self.asymptotically_stable_p
        )
    }
}

/// Finite-horizon surrogates of moment stability: every weighted curve stays
/// below ε, and for asymptotic stability additionally every unweighted tail
/// mean is below `tail_tol` with the fitted decay slope interval below 0.
pub fn stability_verdict(data: &[DatumCurves], opts: &StabilityOptions) -> Result<DecayVerdict> {
    if data.is_empty() {
        return Err(Error::Domain("no moment curves supplied".into()));
    }
    if !(opts.epsilon > 0.0) || !(opts.delta > 0.0) || !(opts.tail_tol > 0.0) {
        return Err(Error::Domain("epsilon, delta and tail_tol must be positive".into()));
    }
    let mut sup_moment = 0.0f64;
    let mut tail_mean = 0.0f64;
    let mut worst: Option<DecayFit> = None;
    for d in data {
        if d.rho_norm > opts.delta * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "initial datum norm {} exceeds delta {}",
                d.rho_norm, opts.delta
            )));
        }
        sup_moment = sup_moment.max(d.weighted.sup());
        let t_end = d.unweighted.nodes.last().copied().unwrap_or(0.0);
        let tm = d.unweighted.tail_mean(t_end * (1.0 - opts.window_fraction));
        tail_mean = if tm.is_nan() { f64::INFINITY } else { tail_mean.max(tm) };
        // A curve that is zero over the window is not decaying but is at the
        // fixed point; treat it as decaying.
        let fit = if d.unweighted.m.iter().all(|m| *m == 0.0) {
            DecayFit {
                slope: f64::NEG_INFINITY,
                slope_ci: (f64::NEG_INFINITY, f64::NEG_INFINITY),
                window: (t_end * (1.0 - opts.window_fraction), t_end),
            }
        } else {
            decay_fit(&d.unweighted, opts.window_fraction)?
        };
        if worst.is_none_or(|w| fit.slope_ci.1 > w.slope_ci.1) {
            worst = Some(fit);
        }
    }
    let fit = worst.expect("non-empty data");
    let stable_p = sup_moment < opts.epsilon;
    let asymptotically_stable_p = stable_p && tail_mean < opts.tail_tol && fit.slope_ci.1 < 0.0;
    Ok(DecayVerdict {
        slope: fit.slope,
        slope_ci: fit.slope_ci,
        sup_moment,
        tail_mean,
        stable_p,
        asymptotically_stable_p,
        window: fit.window,
    })
}
