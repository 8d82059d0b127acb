//! Spectra, the stability sector test and profiling of the Mittag-Leffler
//! kernel bounds.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::C64;
use crate::error::{Error, Result};
use crate::fraccalc::{ml_matrix, rgamma, MLEvalPolicy};
use crate::grid::TimeGrid;
use crate::linalg::{eigen, Matrix};

/// Eigenvalues of a real matrix plus max_k ‖A v_k − λ_k v_k‖ / ‖v_k‖.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    pub residual: f64,
}

pub fn eigenvalues(a: &Matrix) -> Result<Spectrum> {
    let dec = eigen(a)?;
    let n = a.rows();
    let mut residual = 0.0f64;
    for (k, &lam) in dec.values.iter().enumerate() {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..n {
            let mut av = C64::ZERO;
            for j in 0..n {
                av += dec.vectors[(j, k)].scale(a[(i, j)]);
            }
            num = num.max((av - lam * dec.vectors[(i, k)]).abs());
            den = den.max(dec.vectors[(i, k)].abs());
        }
        if den > 0.0 {
            residual = residual.max(num / den);
        }
    }
    Ok(Spectrum {
        eigenvalues: dec.values,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorVerdict {
    pub in_sector: bool,
    /// min over eigenvalues of |arg λ| − απ/2, in radians.
    pub margin: f64,
    pub offending_eigenvalue: Option<C64>,
}

/// Membership of every eigenvalue in {λ ≠ 0 : |arg λ| > απ/2}.
pub fn sector_check(spectrum: &Spectrum, alpha: f64) -> Result<SectorVerdict> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (1/2, 1], got {alpha}")));
    }
    if spectrum.eigenvalues.is_empty() {
        return Err(Error::Shape("empty spectrum".into()));
    }
    let scale = spectrum
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(1.0f64, f64::max);
    let zero_tol = 10.0 * spectrum.residual + 1e-14 * scale;
    let half = alpha * PI / 2.0;
    let mut margin = f64::INFINITY;
    let mut worst = spectrum.eigenvalues[0];
    let mut zero = None;
    for &lam in &spectrum.eigenvalues {
        if lam.abs() <= zero_tol {
            zero.get_or_insert(C64::ZERO);
        }
        let m = lam.arg().abs() - half;
        if m < margin {
            margin = m;
            worst = lam;
        }
    }
    let in_sector = zero.is_none() && margin > 0.0;
    Ok(SectorVerdict {
        in_sector,
        margin,
        offending_eigenvalue: if in_sector { None } else { zero.or(Some(worst)) },
    })
}

fn kernel_norm(a: &Matrix, alpha: f64, t: f64, policy: &MLEvalPolicy) -> Result<f64> {
    if t == 0.0 {
        return Ok(rgamma(alpha));
    }
    let e = ml_matrix(alpha, alpha, &a.scale(t.powf(alpha)), policy)?;
    Ok(e.value.norm_inf())
}

/// max over t_j = jT/n_nodes, j = 0..=n_nodes, of ‖E_{α,α}(t_j^α A)‖.
pub fn ml_norm_sup(a: &Matrix, alpha: f64, t_end: f64, n_nodes: usize) -> Result<f64> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {t_end}")));
    }
    if n_nodes < 16 {
        return Err(Error::Domain(format!("need at least 16 nodes, got {n_nodes}")));
    }
    let policy = MLEvalPolicy::default();
    let grid = TimeGrid::new(t_end, n_nodes)?;
    let norms = (0..=n_nodes)
        .into_par_iter()
        .map(|j| kernel_norm(a, alpha, grid.node(j), &policy))
        .collect::<Result<Vec<f64>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// One coarse node of the kernel profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    /// t^{2α} ‖E_{α,α}(t^α A)‖
    pub q: f64,
    /// t^{1−α} ∫_0^t (t−τ)^{α−1} ‖E_{α,α}((t−τ)^α A)‖ τ^{α−1} dτ
    pub conv: f64,
}

/// Grid estimates of the kernel bounds t^{α−1}‖E_{α,α}(t^α A)‖ ≤ M̃ t^{−α−1}
/// for t ≥ t0, and of the supremum of the weighted kernel convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelProfileReport {
    pub m_sup: f64,
    pub t0: f64,
    pub m_tilde: f64,
    pub conv_sup: f64,
    pub grid: TimeGrid,
    /// Fine quadrature steps per coarse step.
    pub refinement: usize,
    pub profile: Vec<ProfilePoint>,
}

const PROFILE_REFINEMENT: usize = 8;
const PLATEAU_SLACK: f64 = 1e-12;

/// Profiles both kernel bounds on t_j = j t_max/n_nodes.
///
/// Fails with `Error::Divergence` when t^{2α}‖E_{α,α}(t^α A)‖ still grows at
/// the end of the grid, which happens for spectra outside the sector or when
/// t_max is too short.
pub fn kernel_profile(a: &Matrix, alpha: f64, t_max: f64, n_nodes: usize) -> Result<KernelProfileReport> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (1/2, 1], got {alpha}")));
    }
    if !(t_max >= 10.0) || !t_max.is_finite() {
        return Err(Error::Domain(format!("t_max must be at least 10, got {t_max}")));
    }
    if n_nodes < 16 {
        return Err(Error::Domain(format!("need at least 16 nodes, got {n_nodes}")));
    }
    let grid = TimeGrid::new(t_max, n_nodes)?;
    let r = PROFILE_REFINEMENT;
    let n_fine = n_nodes * r;
    let h = t_max / n_fine as f64;
    let policy = MLEvalPolicy::default();
    let phi = (0..=n_fine)
        .into_par_iter()
        .map(|k| kernel_norm(a, alpha, k as f64 * h, &policy))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(k) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!(
            "kernel norm overflows at t = {}",
            k as f64 * h
        )));
    }

    let q: Vec<f64> = (0..=n_nodes)
        .map(|i| grid.node(i).powf(2.0 * alpha) * phi[i * r])
        .collect();
    if !q.iter().all(|v| v.is_finite()) || q[n_nodes] > q[n_nodes - 1] * (1.0 + PLATEAU_SLACK) {
        return Err(Error::Divergence(format!(
            "t^(2 alpha) |E(t^alpha A)| still grows at t = {t_max}"
        )));
    }
    let mut i0 = n_nodes;
    while i0 > 0 && q[i0 - 1] >= q[i0] * (1.0 - PLATEAU_SLACK) {
        i0 -= 1;
    }

    let (wa, wb) = endpoint_weights(alpha, n_fine);
    let scale = h.powf(alpha);
    let profile: Vec<ProfilePoint> = (0..=n_nodes)
        .map(|i| {
            let t = grid.node(i);
            let conv = if i == 0 {
                0.0
            } else {
                t.powf(1.0 - alpha) * scale * convolution(&phi, &wa, &wb, i * r, h, alpha)
            };
            ProfilePoint { t, q: q[i], conv }
        })
        .collect();

    let m_sup = phi.iter().copied().fold(0.0, f64::max);
    let conv_sup = profile.iter().map(|p| p.conv).fold(0.0, f64::max);
    Ok(KernelProfileReport {
        m_sup,
        t0: grid.node(i0),
        m_tilde: q[i0],
        conv_sup,
        grid,
        refinement: r,
        profile,
    })
}

/// Product-trapezoid weights for ∫_{k}^{k+1} s^{α−1} f(s) ds with f linear:
/// f(k) a_k + f(k+1) b_k.
fn endpoint_weights(alpha: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut wa = Vec::with_capacity(n);
    let mut wb = Vec::with_capacity(n);
    for k in 0..n {
        let (k0, k1) = (k as f64, k as f64 + 1.0);
        let m0 = (k1.powf(alpha) - k0.powf(alpha)) / alpha;
        let m1 = (k1.powf(alpha + 1.0) - k0.powf(alpha + 1.0)) / (alpha + 1.0) - k0 * m0;
        wa.push(m0 - m1);
        wb.push(m1);
    }
    (wa, wb)
}

/// ∫_0^{mh} u^{α−1} φ(u) (mh − u)^{α−1} du / h^α, splitting at the midpoint so
/// each half carries exactly one endpoint singularity in its weight.
fn convolution(phi: &[f64], wa: &[f64], wb: &[f64], m: usize, h: f64, alpha: f64) -> f64 {
    let mid = m / 2;
    let pw = |j: usize| (j as f64 * h).powf(alpha - 1.0);
    let mut s = 0.0;
    // u = kh on [0, mid h]; the singular factor u^{α−1} is in the weight.
    for k in 0..mid {
        s += wa[k] * phi[k] * pw(m - k) + wb[k] * phi[k + 1] * pw(m - k - 1);
    }
    // v = t − u = kh on [0, (m − mid) h].
    for k in 0..m - mid {
        s += wa[k] * phi[m - k] * pw(m - k) + wb[k] * phi[m - k - 1] * pw(m - k - 1);
    }
    s
}
