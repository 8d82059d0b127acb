//! Monte Carlo construction of mild solutions on uniform grids.
//!
//! Every scheme marches the same discrete Volterra structure
//!
//!   X_n = F_n − g(t_n, X_n) + Σ_{j<n} K_{n−j} (w_{n−j} u_j + κ_{n−j} σ_j ΔW_j)
//!
//! where F_n is the free term, w and κ are the exact deterministic and
//! variance-matched stochastic product-integration weights of the kernel
//! (t_n − τ)^{α−1} on [t_j, t_{j+1}], and u_j is the scheme's drift driver,
//! all coefficients taken at the left point. Node 0 only exists in weighted
//! form t^{1−α}X(t); the left value used there is the cell average of the
//! leading singular term.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::fraccalc::{ml_matrix, rgamma, FractionalOrder, MLEvalPolicy};
use crate::linalg::Matrix;

pub use crate::grid::TimeGrid;

const NEUTRAL_TOL: f64 = 1e-12;
const NEUTRAL_MAX_ITER: usize = 100;

/// The problem instance: drift matrix A, initial datum ρ of the fractional
/// integral, coefficients and order.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub a: Matrix,
    pub rho: Vec<f64>,
    pub coeffs: CoefficientSet,
    pub order: FractionalOrder,
}

impl SystemSpec {
    pub fn new(a: Matrix, rho: Vec<f64>, coeffs: CoefficientSet, order: FractionalOrder) -> Result<Self> {
        let s = SystemSpec {
            a,
            rho,
            coeffs,
            order,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.order.validate()?;
        let n = self.a.rows();
        if !self.a.is_square() || n == 0 {
            return Err(Error::Shape(format!(
                "A must be square and non-empty, got {}x{}",
                self.a.rows(),
                self.a.cols()
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::Domain("A has non-finite entries".into()));
        }
        if self.rho.len() != n {
            return Err(Error::Shape(format!("rho has length {}, A is {n}x{n}", self.rho.len())));
        }
        if !self.rho.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("rho has non-finite entries".into()));
        }
        self.coeffs.check_dim(n)
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn alpha(&self) -> f64 {
        self.order.alpha
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `i`'s stream, a function of (master_seed, i) only.
pub fn path_seed(master_seed: u64, i: u64) -> u64 {
    mix64(mix64(master_seed) ^ i.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Scalar Brownian increments ΔW_j ~ N(0, Δ), one independent stream per path.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub master_seed: u64,
    increments: Vec<f64>,
}

impl BrownianEnsemble {
    pub fn generate(grid: TimeGrid, n_paths: usize, master_seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Domain("need at least one path".into()));
        }
        let n = grid.n_steps;
        let sd = grid.dt().sqrt();
        let mut increments = vec![0.0; n_paths * n];
        increments.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(master_seed, i as u64));
            for dw in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *dw = sd * z;
            }
        });
        Ok(BrownianEnsemble {
            grid,
            n_paths,
            master_seed,
            increments,
        })
    }

    /// Wraps explicit increments, one row per path.
    pub fn from_increments(grid: TimeGrid, master_seed: u64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("need at least one path".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != grid.n_steps) {
            return Err(Error::Shape(format!(
                "path {bad} has {} increments, grid has {} steps",
                rows[bad].len(),
                grid.n_steps
            )));
        }
        Ok(BrownianEnsemble {
            grid,
            n_paths: rows.len(),
            master_seed,
            increments: rows.concat(),
        })
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let n = self.grid.n_steps;
        &self.increments[i * n..(i + 1) * n]
    }

    /// The same Brownian paths sampled on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid.n_steps;
        if factor == 0 || !n.is_multiple_of(factor) || n / factor < 2 {
            return Err(Error::Domain(format!("cannot coarsen {n} steps by {factor}")));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        Ok(BrownianEnsemble {
            grid: TimeGrid::new(self.grid.t_end, n / factor)?,
            n_paths: self.n_paths,
            master_seed: self.master_seed,
            increments,
        })
    }

    /// Every increment multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        BrownianEnsemble {
            increments: self.increments.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Convenience wrapper for [`BrownianEnsemble::generate`].
pub fn brownian_increments(grid: TimeGrid, n_paths: usize, master_seed: u64) -> Result<BrownianEnsemble> {
    BrownianEnsemble::generate(grid, n_paths, master_seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Mild,
    IntegralForm,
    Picard,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::Mild => "mild",
            Scheme::IntegralForm => "integral_form",
            Scheme::Picard => "picard",
        }
    }
}

/// Nodal values of many paths. Values are stored path-major, then node,
/// then component. `values` at node 0 is NaN: X(t) blows up like t^{α−1}
/// there and only the weighted value is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub scheme: Scheme,
    pub as_printed: bool,
    pub master_seed: u64,
    values: Vec<f64>,
    weighted: Vec<f64>,
}

impl PathEnsemble {
    fn offset(&self, path: usize, node: usize) -> usize {
        (path * self.grid.n_nodes() + node) * self.dim
    }

    /// t_j^{1−α} X(t_j); at node 0 the limit value.
    pub fn weighted(&self, path: usize, node: usize) -> &[f64] {
        let o = self.offset(path, node);
        &self.weighted[o..o + self.dim]
    }

    /// X(t_j), or `None` at node 0.
    pub fn value(&self, path: usize, node: usize) -> Option<&[f64]> {
        if node == 0 {
            return None;
        }
        let o = self.offset(path, node);
        Some(&self.values[o..o + self.dim])
    }

    /// A copy with every stored number multiplied by `c`.
    pub fn scaled(&self, c: f64) -> PathEnsemble {
        PathEnsemble {
            values: self.values.iter().map(|v| v * c).collect(),
            weighted: self.weighted.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// Assembles an ensemble from single paths on a common grid.
    pub fn from_paths(paths: &[SinglePath], scheme: Scheme, master_seed: u64) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Domain("need at least one path".into()))?;
        if paths.iter().any(|p| p.grid != first.grid || p.dim != first.dim) {
            return Err(Error::Shape("paths live on different grids".into()));
        }
        Ok(PathEnsemble {
            grid: first.grid,
            dim: first.dim,
            n_paths: paths.len(),
            scheme,
            as_printed: false,
            master_seed,
            values: paths.iter().flat_map(|p| p.values.iter().copied()).collect(),
            weighted: paths.iter().flat_map(|p| p.weighted.iter().copied()).collect(),
        })
    }

    pub fn path(&self, i: usize) -> SinglePath {
        let stride = self.grid.n_nodes() * self.dim;
        SinglePath {
            grid: self.grid,
            dim: self.dim,
            values: self.values[i * stride..(i + 1) * stride].to_vec(),
            weighted: self.weighted[i * stride..(i + 1) * stride].to_vec(),
        }
    }

    /// Flat CSV: `path,node,t,weighted_0..,value_0..`, value columns empty at
    /// node 0.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("path,node,t");
        for k in 0..self.dim {
            header += &format!(",weighted_{k}");
        }
        for k in 0..self.dim {
            header += &format!(",value_{k}");
        }
        writeln!(w, "{header}")?;
        for p in 0..self.n_paths {
            for j in 0..self.grid.n_nodes() {
                let mut line = format!("{p},{j},{:.16e}", self.grid.node(j));
                for v in self.weighted(p, j) {
                    line += &format!(",{v:.16e}");
                }
                match self.value(p, j) {
                    Some(vals) => {
                        for v in vals {
                            line += &format!(",{v:.16e}");
                        }
                    }
                    None => line += &",".repeat(self.dim),
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    /// Provenance block: scheme, seed, grid and a digest of the system.
    pub fn metadata(&self, system_digest: &str) -> String {
        format!(
            "scheme = {}\nas_printed = {}\nmaster_seed = {}\nn_paths = {}\nt_end = {:.16e}\nn_steps = {}\ndt = {:.16e}\ndim = {}\nsystem_digest = {}\n",
            self.scheme.tag(),
            self.as_printed,
            self.master_seed,
            self.n_paths,
            self.grid.t_end,
            self.grid.n_steps,
            self.grid.dt(),
            self.dim,
            system_digest
        )
    }
}

/// One path on a grid, laid out like a row of [`PathEnsemble`].
#[derive(Clone, Debug, PartialEq)]
pub struct SinglePath {
    pub grid: TimeGrid,
    pub dim: usize,
    pub weighted: Vec<f64>,
    pub values: Vec<f64>,
}

impl SinglePath {
    pub fn weighted_at(&self, node: usize) -> &[f64] {
        &self.weighted[node * self.dim..(node + 1) * self.dim]
    }

    pub fn value_at(&self, node: usize) -> Option<&[f64]> {
        (node > 0).then(|| &self.values[node * self.dim..(node + 1) * self.dim])
    }

    /// max_j ‖t_j^{1−α}(X − Y)(t_j)‖_∞ over all nodes.
    pub fn weighted_sup_distance(&self, other: &SinglePath) -> f64 {
        self.weighted
            .iter()
            .zip(&other.weighted)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Form {
    Mild,
    Integral { as_printed: bool },
}

/// Precomputed, path-independent data of one scheme on one grid.
struct Engine<'a> {
    sys: &'a SystemSpec,
    form: Form,
    d: usize,
    n: usize,
    t: Vec<f64>,
    /// t_n^{1−α}
    tw: Vec<f64>,
    /// Free term F_n, (n + 1) d entries; node 0 unused.
    free: Vec<f64>,
    /// Blocks K_k w_k and K_k κ_k stored at index N − k, each d×d row-major.
    kw: Vec<f64>,
    kk: Vec<f64>,
    /// Δ^{α−1}
    dpow: f64,
    alpha: f64,
}

impl<'a> Engine<'a> {
    fn new(sys: &'a SystemSpec, grid: TimeGrid, form: Form) -> Result<Self> {
        sys.validate()?;
        let alpha = sys.alpha();
        let d = sys.dim();
        let n = grid.n_steps;
        let dt = grid.dt();
        let t = grid.nodes();
        let tw: Vec<f64> = t.iter().map(|s| s.powf(1.0 - alpha)).collect();
        let w = crate::fraccalc::product_weights(dt, alpha, n);
        let kappa = stochastic_weights(dt, alpha, n);
        let inv_gamma = rgamma(alpha);

        let kernels: Vec<Matrix> = match form {
            Form::Mild => {
                let policy = MLEvalPolicy::default();
                (1..=n)
                    .into_par_iter()
                    .map(|k| {
                        let m = sys.a.scale(t[k].powf(alpha));
                        ml_matrix(alpha, alpha, &m, &policy).map(|e| e.value)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Form::Integral { .. } => vec![Matrix::identity(d).scale(inv_gamma); n],
        };
        if let Some(k) = kernels.iter().position(|m| !m.is_finite()) {
            return Err(Error::NoConvergence(format!(
                "kernel E(t^alpha A) overflows at t = {}",
                t[k + 1]
            )));
        }

        let dd = d * d;
        let mut kw = vec![0.0; (n + 1) * dd];
        let mut kk = vec![0.0; (n + 1) * dd];
        for k in 1..=n {
            let m = n - k;
            for (idx, v) in kernels[k - 1].as_slice().iter().enumerate() {
                kw[m * dd + idx] = v * w[k];
                kk[m * dd + idx] = v * kappa[k];
            }
        }

        let mut free = vec![0.0; (n + 1) * d];
        for k in 1..=n {
            let p = t[k].powf(alpha - 1.0);
            let row = &mut free[k * d..(k + 1) * d];
            match form {
                Form::Mild => {
                    let kr = kernels[k - 1].matvec(&sys.rho);
                    for (f, v) in row.iter_mut().zip(kr) {
                        *f = p * v;
                    }
                }
                Form::Integral { .. } => {
                    for (f, r) in row.iter_mut().zip(&sys.rho) {
                        *f = p * r * inv_gamma;
                    }
                }
            }
        }

        Ok(Engine {
            sys,
            form,
            d,
            n,
            t,
            tw,
            free,
            kw,
            kk,
            dpow: dt.powf(alpha - 1.0),
            alpha,
        })
    }

    /// Weighted value at node 0: Y = ρ/Γ(α) − Δ^{1−α} g(0, Δ^{α−1} Y).
    fn initial_weighted(&self) -> std::result::Result<Vec<f64>, String> {
        let base: Vec<f64> = self.sys.rho.iter().map(|r| r * rgamma(self.alpha)).collect();
        let g = &self.sys.coeffs.g;
        if g.is_zero() {
            return Ok(base);
        }
        let mut y = base.clone();
        let mut x = vec![0.0; self.d];
        let mut gx = vec![0.0; self.d];
        for _ in 0..NEUTRAL_MAX_ITER {
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi = self.dpow * yi;
            }
            g.eval_into(0.0, &x, &mut gx);
            let mut change = 0.0f64;
            let mut size = 0.0f64;
            for k in 0..self.d {
                let new = base[k] - gx[k] / self.dpow;
                change = change.max((new - y[k]).abs());
                size = size.max(new.abs());
                y[k] = new;
            }
            if change <= NEUTRAL_TOL * (1.0 + size) {
                return Ok(y);
            }
        }
        Err("neutral fixed point at t = 0 did not converge".into())
    }

    /// Left value standing in for X(0): the mean of Δ^{α−1}... over [0, Δ].
    fn initial_left_value(&self, y0: &[f64]) -> Vec<f64> {
        y0.iter().map(|y| self.dpow * y / self.alpha).collect()
    }

    /// Drift driver u and noise term σ ΔW at (t, x).
    fn drivers(&self, t: f64, x: &[f64], dw: f64, u: &mut [f64], s: &mut [f64], tmp: &mut [f64]) {
        let c = &self.sys.coeffs;
        match self.form {
            Form::Mild => {
                c.b.eval_into(t, x, u);
                if !c.g.is_zero() {
                    c.g.eval_into(t, x, tmp);
                    sub_matvec(&self.sys.a, tmp, u);
                }
            }
            Form::Integral { as_printed } => {
                c.b.eval_into(t, x, u);
                if as_printed {
                    if !c.g.is_zero() {
                        c.g.eval_into(t, x, tmp);
                        add_matvec(&self.sys.a, tmp, u);
                    }
                } else {
                    add_matvec(&self.sys.a, x, u);
                }
            }
        }
        c.sigma.eval_into(t, x, s);
        for v in s.iter_mut() {
            *v *= dw;
        }
    }

    /// Σ_{j<n} K_{n−j} (w_{n−j} u_j + κ_{n−j} s_j) into `out`.
    fn memory(&self, n: usize, u: &[f64], s: &[f64], out: &mut [f64]) {
        let d = self.d;
        let start = self.n - n;
        if d == 1 {
            out[0] = dot(&self.kw[start..self.n], &u[..n]) + dot(&self.kk[start..self.n], &s[..n]);
            return;
        }
        out.fill(0.0);
        let dd = d * d;
        for j in 0..n {
            let m = start + j;
            let bw = &self.kw[m * dd..(m + 1) * dd];
            let bk = &self.kk[m * dd..(m + 1) * dd];
            let uj = &u[j * d..(j + 1) * d];
            let sj = &s[j * d..(j + 1) * d];
            for r in 0..d {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += bw[r * d + c] * uj[c] + bk[r * d + c] * sj[c];
                }
                out[r] += acc;
            }
        }
    }

    /// Solves x = r − g(t, x) by fixed-point iteration.
    fn solve_neutral(&self, t: f64, r: &[f64], x: &mut [f64], tmp: &mut [f64]) -> std::result::Result<(), String> {
        x.copy_from_slice(r);
        let g = &self.sys.coeffs.g;
        if g.is_zero() {
            return Ok(());
        }
        for _ in 0..NEUTRAL_MAX_ITER {
            g.eval_into(t, x, tmp);
            let mut change = 0.0f64;
            let mut size = 0.0f64;
            for k in 0..x.len() {
                let new = r[k] - tmp[k];
                change = change.max((new - x[k]).abs());
                size = size.max(new.abs());
                x[k] = new;
            }
            if !(change <= NEUTRAL_TOL * (1.0 + size)) {
                continue;
            }
            return Ok(());
        }
        Err(format!("neutral fixed point at t = {t} did not converge (L_g >= 1 or overflow)"))
    }

    /// Time-marches one path into `w` (weighted) and `v` (values).
    fn march(&self, dw: &[f64], w: &mut [f64], v: &mut [f64]) -> std::result::Result<(), String> {
        let d = self.d;
        let n = self.n;
        let mut u = vec![0.0; n * d];
        let mut s = vec![0.0; n * d];
        let mut tmp = vec![0.0; d];
        let mut r = vec![0.0; d];
        let mut x = vec![0.0; d];

        let y0 = self.initial_weighted()?;
        w[..d].copy_from_slice(&y0);
        v[..d].fill(f64::NAN);
        let xbar0 = self.initial_left_value(&y0);
        self.drivers(0.0, &xbar0, dw[0], &mut u[..d], &mut s[..d], &mut tmp);

        for k in 1..=n {
            self.memory(k, &u, &s, &mut r);
            for (ri, fi) in r.iter_mut().zip(&self.free[k * d..(k + 1) * d]) {
                *ri += fi;
            }
            self.solve_neutral(self.t[k], &r, &mut x, &mut tmp)?;
            if !x.iter().all(|xi| xi.is_finite()) {
                return Err(format!("non-finite state at t = {}", self.t[k]));
            }
            v[k * d..(k + 1) * d].copy_from_slice(&x);
            for (wi, xi) in w[k * d..(k + 1) * d].iter_mut().zip(&x) {
                *wi = self.tw[k] * xi;
            }
            if k < n {
                let (uk, sk) = (&mut u[k * d..(k + 1) * d], &mut s[k * d..(k + 1) * d]);
                self.drivers(self.t[k], &x, dw[k], uk, sk, &mut tmp);
            }
        }
        Ok(())
    }

    /// One application of the discrete solution operator to the whole path
    /// `(w_old, v_old)`, writing the image into `(w_new, v_new)`.
    fn apply(
        &self,
        dw: &[f64],
        w_old: &[f64],
        v_old: &[f64],
        w_new: &mut [f64],
        v_new: &mut [f64],
    ) {
        let d = self.d;
        let n = self.n;
        let mut u = vec![0.0; n * d];
        let mut s = vec![0.0; n * d];
        let mut tmp = vec![0.0; d];
        let mut r = vec![0.0; d];

        let y_old = &w_old[..d];
        let xbar0 = self.initial_left_value(y_old);
        self.drivers(0.0, &xbar0, dw[0], &mut u[..d], &mut s[..d], &mut tmp);
        for k in 1..n {
            let (uk, sk) = (&mut u[k * d..(k + 1) * d], &mut s[k * d..(k + 1) * d]);
            self.drivers(self.t[k], &v_old[k * d..(k + 1) * d], dw[k], uk, sk, &mut tmp);
        }

        // Node 0: Y = ρ/Γ(α) − Δ^{1−α} g(0, Δ^{α−1} Y_old).
        let g = &self.sys.coeffs.g;
        let x0: Vec<f64> = y_old.iter().map(|y| self.dpow * y).collect();
        g.eval_into(0.0, &x0, &mut tmp);
        for k in 0..d {
            w_new[k] = self.sys.rho[k] * rgamma(self.alpha) - tmp[k] / self.dpow;
            v_new[k] = f64::NAN;
        }

        for k in 1..=n {
            self.memory(k, &u, &s, &mut r);
            g.eval_into(self.t[k], &v_old[k * d..(k + 1) * d], &mut tmp);
            for c in 0..d {
                let x = self.free[k * d + c] + r[c] - tmp[c];
                v_new[k * d + c] = x;
                w_new[k * d + c] = self.tw[k] * x;
            }
        }
    }

    fn run(&self, ens: &BrownianEnsemble) -> Result<(Vec<f64>, Vec<f64>)> {
        let stride = (self.n + 1) * self.d;
        let mut values = vec![0.0; ens.n_paths * stride];
        let mut weighted = vec![0.0; ens.n_paths * stride];
        let failures: Vec<(usize, String)> = weighted
            .par_chunks_mut(stride)
            .zip(values.par_chunks_mut(stride))
            .enumerate()
            .filter_map(|(i, (w, v))| self.march(ens.path(i), w, v).err().map(|e| (i, e)))
            .collect();
        if let Some((path, reason)) = failures.into_iter().min_by_key(|f| f.0) {
            return Err(Error::PathFailure { path, reason });
        }
        Ok((values, weighted))
    }
}

/// sqrt(∫_{t_j}^{t_{j+1}} (t_n − τ)^{2α−2} dτ / Δ) indexed by k = n − j.
pub fn stochastic_weights(dt: f64, alpha: f64, n_max: usize) -> Vec<f64> {
    let e = 2.0 * alpha - 1.0;
    let scale = dt.powf(2.0 * alpha - 2.0) / e;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(0.0);
    let mut prev = 0.0;
    for k in 1..=n_max {
        let cur = (k as f64).powf(e);
        out.push((scale * (cur - prev)).sqrt());
        prev = cur;
    }
    out
}

/// Fixed-order dot product with four interleaved accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn add_matvec(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn sub_matvec(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o -= m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn ensemble(
    sys: &SystemSpec,
    ens: &BrownianEnsemble,
    scheme: Scheme,
    as_printed: bool,
    (values, weighted): (Vec<f64>, Vec<f64>),
) -> PathEnsemble {
    PathEnsemble {
        grid: ens.grid,
        dim: sys.dim(),
        n_paths: ens.n_paths,
        scheme,
        as_printed,
        master_seed: ens.master_seed,
        values,
        weighted,
    }
}

/// Product-integration scheme for the variation-of-constants form with the
/// Mittag-Leffler kernel E_{α,α}((t−τ)^α A).
pub fn simulate_mild(system: &SystemSpec, ens: &BrownianEnsemble) -> Result<PathEnsemble> {
    let engine = Engine::new(system, ens.grid, Form::Mild)?;
    Ok(ensemble(system, ens, Scheme::Mild, false, engine.run(ens)?))
}

/// Same quadrature on the Volterra form with kernel (t−τ)^{α−1}/Γ(α) and the
/// memory term A X. With `as_printed`, the memory term is A g(τ, X) instead.
pub fn simulate_integral_form(system: &SystemSpec, ens: &BrownianEnsemble, as_printed: bool) -> Result<PathEnsemble> {
    let engine = Engine::new(system, ens.grid, Form::Integral { as_printed })?;
    Ok(ensemble(system, ens, Scheme::IntegralForm, as_printed, engine.run(ens)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOutcome {
    pub path: SinglePath,
    /// Number of updates that moved the path by more than the tolerance.
    pub iterations: usize,
    /// Last successive-difference quotient ‖X_{k+1} − X_k‖ / ‖X_k − X_{k−1}‖.
    pub contraction_ratio: f64,
}

/// Whole-path Picard iteration of the mild-scheme operator from X ≡ 0,
/// stopped when the weighted sup-norm change is at most `tol`.
pub fn picard_path_solve(
    system: &SystemSpec,
    grid: TimeGrid,
    increments: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    if increments.len() != grid.n_steps {
        return Err(Error::Shape(format!(
            "{} increments for {} steps",
            increments.len(),
            grid.n_steps
        )));
    }
    let engine = Engine::new(system, grid, Form::Mild)?;
    picard_with(&engine, grid, increments, max_iter, tol)
}

fn picard_with(engine: &Engine, grid: TimeGrid, dw: &[f64], max_iter: usize, tol: f64) -> Result<PicardOutcome> {
    let len = (engine.n + 1) * engine.d;
    let mut w = vec![0.0; len];
    let mut v = vec![0.0; len];
    let mut w_new = vec![0.0; len];
    let mut v_new = vec![0.0; len];
    let mut prev_change = f64::NAN;
    let mut ratio = 0.0;
    for iterations in 0..max_iter {
        engine.apply(dw, &w, &v, &mut w_new, &mut v_new);
        let change = w.iter().zip(&w_new).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !change.is_finite() {
            return Err(Error::NoConvergence("Picard iterates overflowed".into()));
        }
        if prev_change > 0.0 {
            ratio = change / prev_change;
        }
        std::mem::swap(&mut w, &mut w_new);
        std::mem::swap(&mut v, &mut v_new);
        if change <= tol {
            return Ok(PicardOutcome {
                path: SinglePath {
                    grid,
                    dim: engine.d,
                    weighted: w,
                    values: v,
                },
                iterations,
                contraction_ratio: ratio,
            });
        }
        prev_change = change;
    }
    Err(Error::NoConvergence(format!(
        "Picard iteration not converged after {max_iter} sweeps; last contraction ratio {ratio:.3e}"
    )))
}

/// Picard solves for every path of an ensemble.
pub fn simulate_picard(system: &SystemSpec, ens: &BrownianEnsemble, max_iter: usize, tol: f64) -> Result<PathEnsemble> {
    let engine = Engine::new(system, ens.grid, Form::Mild)?;
    let results: Vec<Result<PicardOutcome>> = (0..ens.n_paths)
        .into_par_iter()
        .map(|i| picard_with(&engine, ens.grid, ens.path(i), max_iter, tol))
        .collect();
    let mut paths = Vec::with_capacity(ens.n_paths);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => paths.push(o.path),
            Err(e) => {
                return Err(Error::PathFailure {
                    path: i,
                    reason: e.to_string(),
                })
            }
        }
    }
    PathEnsemble::from_paths(&paths, Scheme::Picard, ens.master_seed)
}

/// Dispatches on `scheme`.
pub fn simulate(
    system: &SystemSpec,
    ens: &BrownianEnsemble,
    scheme: Scheme,
    as_printed: bool,
) -> Result<PathEnsemble> {
    match scheme {
        Scheme::Mild => simulate_mild(system, ens),
        Scheme::IntegralForm => simulate_integral_form(system, ens, as_printed),
        Scheme::Picard => simulate_picard(system, ens, 200, 1e-12),
    }
}

/// X(t) = t^{α−1} E_{α,α}(t^α A) ρ; node 0 holds the weighted limit ρ/Γ(α).
pub fn closed_form_homogeneous(a: &Matrix, rho: &[f64], alpha: f64, grid: TimeGrid) -> Result<SinglePath> {
    if !a.is_square() || a.rows() != rho.len() {
        return Err(Error::Shape(format!(
            "A is {}x{}, rho has length {}",
            a.rows(),
            a.cols(),
            rho.len()
        )));
    }
    let d = rho.len();
    let policy = MLEvalPolicy::default();
    let nodes = grid.nodes();
    let rows = nodes[1..]
        .par_iter()
        .map(|&t| ml_matrix(alpha, alpha, &a.scale(t.powf(alpha)), &policy).map(|e| e.value.matvec(rho)))
        .collect::<Result<Vec<_>>>()?;
    let mut weighted = Vec::with_capacity(nodes.len() * d);
    let mut values = Vec::with_capacity(nodes.len() * d);
    weighted.extend(rho.iter().map(|r| r * rgamma(alpha)));
    values.extend(std::iter::repeat_n(f64::NAN, d));
    for (t, row) in nodes[1..].iter().zip(rows) {
        let p = t.powf(alpha - 1.0);
        weighted.extend_from_slice(&row);
        values.extend(row.iter().map(|v| p * v));
    }
    Ok(SinglePath {
        grid,
        dim: d,
        weighted,
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    /// Root mean square over paths of the weighted sup-norm error.
    pub error: f64,
    /// log2 of the error ratio to the previous row.
    pub order: Option<f64>,
}

/// Errors of N, 2N, 4N against a 16N reference driven by the same Brownian
/// paths.
pub fn self_convergence(
    system: &SystemSpec,
    grid: TimeGrid,
    n_paths: usize,
    master_seed: u64,
    scheme: Scheme,
    as_printed: bool,
) -> Result<Vec<ConvergenceRow>> {
    let fine = BrownianEnsemble::generate(grid.refined(16), n_paths, master_seed)?;
    let reference = simulate(system, &fine, scheme, as_printed)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for factor in [16usize, 8, 4] {
        let coarse = fine.coarsen(factor)?;
        let sol = simulate(system, &coarse, scheme, as_printed)?;
        let mut sq = 0.0;
        for p in 0..n_paths {
            let mut e = 0.0f64;
            for j in 1..coarse.grid.n_nodes() {
                let a = sol.weighted(p, j);
                let b = reference.weighted(p, j * factor);
                for (x, y) in a.iter().zip(b) {
                    e = e.max((x - y).abs());
                }
            }
            sq += e * e;
        }
        let error = (sq / n_paths as f64).sqrt();
        let order = rows.last().map(|r| (r.error / error).log2());
        rows.push(ConvergenceRow {
            n_steps: coarse.grid.n_steps,
            error,
            order,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_bounded_smooth, make_linear};
    use crate::fraccalc::{gamma_fn, ml_real};

    fn scalar_system(a: f64, rho: f64, coeffs: CoefficientSet) -> SystemSpec {
        SystemSpec::new(Matrix::scalar(a), vec![rho], coeffs, FractionalOrder::new(0.75, 2).unwrap()).unwrap()
    }

    fn linear(l: f64) -> CoefficientSet {
        let m = Matrix::scalar(l);
        make_linear(m.clone(), m.clone(), m).unwrap()
    }

    #[test]
    fn brownian_moments_and_determinism() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let e1 = BrownianEnsemble::generate(grid, 100_000, 11).unwrap();
        let e2 = BrownianEnsemble::generate(grid, 100_000, 11).unwrap();
        assert_eq!(e1, e2);
        let dt = grid.dt();
        for j in 0..4 {
            let xs: Vec<f64> = (0..e1.n_paths).map(|i| e1.path(i)[j]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!(mean.abs() < 4.0 * (dt / 1e5).sqrt());
            assert!((var / dt - 1.0).abs() < 0.05);
        }
        let e3 = BrownianEnsemble::generate(grid, 3, 12).unwrap();
        assert_ne!(e3.path(0), e1.path(0));
    }

    #[test]
    fn coarsening_sums_increments() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let e = BrownianEnsemble::generate(grid, 2, 5).unwrap();
        let c = e.coarsen(4).unwrap();
        assert_eq!(c.grid.n_steps, 2);
        let want: f64 = e.path(1)[4..8].iter().sum();
        assert!((c.path(1)[1] - want).abs() < 1e-15);
        assert!(e.coarsen(3).is_err());
    }

    #[test]
    fn zero_coefficients_reproduce_closed_form() {
        let sys = scalar_system(-1.0, 1.0, CoefficientSet::zero());
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let ens = BrownianEnsemble::generate(grid, 2, 1).unwrap();
        let sim = simulate_mild(&sys, &ens).unwrap();
        let exact = closed_form_homogeneous(&sys.a, &sys.rho, 0.75, grid).unwrap();
        assert!(sim.path(1).weighted_sup_distance(&exact) < 1e-14);
        let pic = picard_path_solve(&sys, grid, ens.path(0), 10, 1e-13).unwrap();
        assert_eq!(pic.iterations, 1);
        assert!(pic.path.weighted_sup_distance(&exact) < 1e-14);
        // Node-0 weighted value is ρ/Γ(α) for every scheme.
        let g = 1.0 / gamma_fn(0.75).unwrap();
        assert!((sim.weighted(0, 0)[0] - g).abs() < 1e-15);
        let int = simulate_integral_form(&sys, &ens, false).unwrap();
        assert!((int.weighted(0, 0)[0] - g).abs() < 1e-15);
    }

    #[test]
    fn closed_form_values() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = closed_form_homogeneous(&Matrix::scalar(-1.0), &[1.0], 0.75, grid).unwrap();
        let want = ml_real(0.75, 0.75, -1.0, &MLEvalPolicy::default()).unwrap();
        assert!((p.value_at(4).unwrap()[0] - want).abs() < 1e-14);
        assert!(p.value_at(0).is_none());
        let e = closed_form_homogeneous(&Matrix::scalar(-0.7), &[2.0], 1.0, grid).unwrap();
        assert!((e.value_at(2).unwrap()[0] - 2.0 * (-0.35f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn integral_form_without_memory_is_exact() {
        let sys = scalar_system(0.0, 2.0, CoefficientSet::zero());
        let grid = TimeGrid::new(2.0, 16).unwrap();
        let ens = BrownianEnsemble::generate(grid, 1, 0).unwrap();
        let sim = simulate_integral_form(&sys, &ens, false).unwrap();
        let g = gamma_fn(0.75).unwrap();
        for j in 1..=16 {
            let t = grid.node(j);
            assert!((sim.value(0, j).unwrap()[0] - t.powf(-0.25) * 2.0 / g).abs() < 1e-14);
        }
    }

    #[test]
    fn integral_form_converges_to_resolvent() {
        let sys = scalar_system(-1.0, 1.0, CoefficientSet::zero());
        let err = |n: usize| {
            let grid = TimeGrid::new(1.0, n).unwrap();
            let ens = BrownianEnsemble::generate(grid, 1, 0).unwrap();
            let sim = simulate_integral_form(&sys, &ens, false).unwrap();
            let exact = closed_form_homogeneous(&sys.a, &sys.rho, 0.75, grid).unwrap();
            sim.path(0).weighted_sup_distance(&exact)
        };
        let (e1, e2, e3) = (err(64), err(128), err(256));
        assert!(e2 < e1 && e3 < e2, "{e1} {e2} {e3}");
    }

    fn assert_doubled(a: &PathEnsemble, b: &PathEnsemble) {
        for p in 0..a.n_paths {
            for j in 1..=a.grid.n_steps {
                let (x, y) = (a.value(p, j).unwrap()[0], b.value(p, j).unwrap()[0]);
                assert!((2.0 * x - y).abs() <= 1e-10 * y.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn linear_in_rho_on_fixed_noise() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let ens = BrownianEnsemble::generate(grid, 3, 9).unwrap();
        let a = simulate_mild(&scalar_system(-1.0, 0.7, linear(0.05)), &ens).unwrap();
        let b = simulate_mild(&scalar_system(-1.0, 1.4, linear(0.05)), &ens).unwrap();
        assert_doubled(&a, &b);
    }

    #[test]
    fn additive_noise_is_jointly_linear() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let ens = BrownianEnsemble::generate(grid, 3, 9).unwrap();
        let noise = CoefficientSet::additive_noise(vec![0.3], true).unwrap();
        let a = simulate_mild(&scalar_system(-1.0, 0.7, noise.clone()), &ens).unwrap();
        let noise2 = CoefficientSet::additive_noise(vec![0.6], true).unwrap();
        let b = simulate_mild(&scalar_system(-1.0, 1.4, noise2), &ens).unwrap();
        let c = simulate_mild(&scalar_system(-1.0, 1.4, noise), &ens.scaled(2.0)).unwrap();
        assert_doubled(&a, &b);
        assert_doubled(&a, &c);
    }

    #[test]
    fn picard_matches_marching() {
        let sys = scalar_system(-1.0, 1.0, linear(0.05));
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let ens = BrownianEnsemble::generate(grid, 2, 4).unwrap();
        let march = simulate_mild(&sys, &ens).unwrap();
        let tol = 1e-11;
        for p in 0..2 {
            let pic = picard_path_solve(&sys, grid, ens.path(p), 100, tol).unwrap();
            assert!(pic.contraction_ratio < 1.0);
            assert!(pic.path.weighted_sup_distance(&march.path(p)) <= 10.0 * tol);
        }
    }

    #[test]
    fn nonlinear_neutral_term_and_vector_system() {
        let a = Matrix::from_rows(&[[-1.0, 0.5], [-0.5, -2.0]]).unwrap();
        let sys = SystemSpec::new(a, vec![1.0, -0.5], make_bounded_smooth(0.1, 0.05, 0.1).unwrap(), FractionalOrder::new(0.8, 2).unwrap()).unwrap();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let ens = BrownianEnsemble::generate(grid, 2, 8).unwrap();
        let march = simulate_mild(&sys, &ens).unwrap();
        let pic = picard_path_solve(&sys, grid, ens.path(1), 200, 1e-12).unwrap();
        assert!(pic.path.weighted_sup_distance(&march.path(1)) < 1e-10);
        // Neutral equation holds at every node.
        for j in 1..=64 {
            let x = march.value(0, j).unwrap();
            assert!(x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        let r = SystemSpec::new(Matrix::scalar(-1.0), vec![1.0, 2.0], CoefficientSet::zero(), FractionalOrder::new(0.75, 2).unwrap());
        assert!(matches!(r, Err(Error::Shape(_))));
        let lin = make_linear(Matrix::zeros(2, 2), Matrix::identity(2), Matrix::zeros(2, 2)).unwrap();
        let r = SystemSpec::new(Matrix::scalar(-1.0), vec![1.0], lin, FractionalOrder::new(0.75, 2).unwrap());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn neutral_term_too_strong_fails_per_path() {
        let g = Matrix::scalar(1.5);
        let c = make_linear(g, Matrix::scalar(0.0), Matrix::scalar(0.0)).unwrap();
        let sys = scalar_system(-1.0, 1.0, c);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ens = BrownianEnsemble::generate(grid, 3, 1).unwrap();
        assert!(matches!(simulate_mild(&sys, &ens), Err(Error::PathFailure { path: 0, .. })));
    }

    #[test]
    fn csv_layout() {
        let sys = scalar_system(-1.0, 1.0, CoefficientSet::zero());
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let ens = BrownianEnsemble::generate(grid, 1, 1).unwrap();
        let sim = simulate_mild(&sys, &ens).unwrap();
        let mut buf = Vec::new();
        sim.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,node,t,weighted_0,value_0");
        assert!(lines[1].starts_with("0,0,0.0000000000000000e0,") && lines[1].ends_with(','));
        assert_eq!(lines.len(), 4);
        assert!(sim.metadata("abc").contains("system_digest = abc"));
    }
}
