//! Small dense real and complex matrices.
//!
//! Everything here is sized for the state dimensions this crate deals with
//! (n up to a few dozen); no blocking, no BLAS.

#![allow(clippy::needless_range_loop)]

use std::ops::{Index, IndexMut};

use crate::complex::C64;
use crate::error::{Error, Result};

/// Row-major dense real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row vectors; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Maximum absolute row sum, the operator norm induced by the max-norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, o: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Matrix) -> Matrix {
        self.add(&o.scale(-1.0))
    }

    pub fn matmul(&self, o: &Matrix) -> Matrix {
        assert_eq!(self.cols, o.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = o.row(k);
                let dst = &mut out.data[i * o.cols..(i + 1) * o.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `out = self * x`.
    #[inline]
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn to_complex(&self) -> CMatrix {
        CMatrix {
            n: self.rows,
            data: self.data.iter().map(|&v| C64::real(v)).collect(),
        }
    }

    /// Inverse by partial-pivot LU; errors on (numerically) singular input.
    pub fn inverse(&self) -> Result<Matrix> {
        let inv = self.to_complex().inverse()?;
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (d, v) in out.data.iter_mut().zip(&inv.data) {
            *d = v.re;
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix {
            n,
            data: vec![C64::ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::ONE;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, o: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    let v = out[(i, j)] + a * o[(k, j)];
                    out[(i, j)] = v;
                }
            }
        }
        out
    }

    /// In-place LU with partial pivoting. Returns the factors and the
    /// permutation, or an error if a pivot vanishes.
    pub fn lu(&self) -> Result<Lu> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= scale * 1e-300 {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / piv;
                a[i * n + k] = f;
                for j in k + 1..n {
                    let v = a[i * n + j] - f * a[k * n + j];
                    a[i * n + j] = v;
                }
            }
        }
        Ok(Lu { n, a, perm })
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        let lu = self.lu()?;
        let n = self.n;
        let mut inv = CMatrix::zeros(n);
        let mut col = vec![C64::ZERO; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = C64::ZERO);
            col[j] = C64::ONE;
            lu.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

/// LU factors of a complex matrix (unit lower triangle stored below the
/// diagonal).
pub struct Lu {
    n: usize,
    a: Vec<C64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        let pb: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&pb);
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.a[i * n + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.a[i * n + j] * b[j];
            }
            b[i] = s / self.a[i * n + i];
        }
    }
}

/// Eigenvalues and (possibly unnormalized) eigenvectors of a real square
/// matrix. Column `k` of `vectors` pairs with `values[k]`.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    pub vectors: CMatrix,
}

/// Hessenberg reduction followed by the implicitly double-shifted QR
/// iteration with deflation, then back-substitution for eigenvectors.
///
/// The total number of QR sweeps is capped at `100 n`.
pub fn eigen(a: &Matrix) -> Result<EigenDecomposition> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let nn = a.rows();
    if nn == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let mut h: Vec<Vec<f64>> = a.to_rows();
    let mut v = vec![vec![0.0; nn]; nn];
    orthes(&mut h, &mut v);
    let (d, e) = hqr2(&mut h, &mut v, 100 * nn)?;

    let mut values = Vec::with_capacity(nn);
    let mut vectors = CMatrix::zeros(nn);
    let mut k = 0;
    while k < nn {
        if e[k] == 0.0 {
            values.push(C64::real(d[k]));
            for i in 0..nn {
                vectors[(i, k)] = C64::real(v[i][k]);
            }
            k += 1;
        } else {
            values.push(C64::new(d[k], e[k]));
            values.push(C64::new(d[k + 1], e[k + 1]));
            for i in 0..nn {
                let z = C64::new(v[i][k], v[i][k + 1]);
                vectors[(i, k)] = z;
                vectors[(i, k + 1)] = z.conj();
            }
            k += 2;
        }
    }
    // Normalize columns to unit 2-norm.
    for j in 0..nn {
        let norm = (0..nn).map(|i| vectors[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..nn {
                let z = vectors[(i, j)] / norm;
                vectors[(i, j)] = z;
            }
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

fn orthes(h: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let n = h.len();
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale != 0.0 {
            let mut hh = 0.0;
            for i in (m..=high).rev() {
                ort[i] = h[i][m - 1] / scale;
                hh += ort[i] * ort[i];
            }
            let mut g = hh.sqrt();
            if ort[m] > 0.0 {
                g = -g;
            }
            hh -= ort[m] * g;
            ort[m] -= g;
            for j in m..n {
                let f = (m..=high).rev().map(|i| ort[i] * h[i][j]).sum::<f64>() / hh;
                for i in m..=high {
                    h[i][j] -= f * ort[i];
                }
            }
            for i in 0..=high {
                let f = (m..=high).rev().map(|j| ort[j] * h[i][j]).sum::<f64>() / hh;
                for j in m..=high {
                    h[i][j] -= f * ort[j];
                }
            }
            ort[m] *= scale;
            h[m][m - 1] = scale * g;
        }
    }
    for (i, row) in v.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { 1.0 } else { 0.0 };
        }
    }
    for m in (1..high).rev() {
        if h[m][m - 1] != 0.0 {
            for i in m + 1..=high {
                ort[i] = h[i][m - 1];
            }
            for j in m..=high {
                let mut g: f64 = (m..=high).map(|i| ort[i] * v[i][j]).sum();
                g = (g / ort[m]) / h[m][m - 1];
                for i in m..=high {
                    v[i][j] += g * ort[i];
                }
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    let q = C64::new(xr, xi) / C64::new(yr, yi);
    (q.re, q.im)
}

#[allow(clippy::many_single_char_names)]
#[allow(unused_assignments)]
fn hqr2(h: &mut [Vec<f64>], v: &mut [Vec<f64>], max_sweeps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = h.len();
    let mut n = nn as isize - 1;
    let low: isize = 0;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut t, mut w, mut x, mut y): (f64, f64, f64, f64);
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[i][j].abs();
        }
    }

    let mut iter = 0;
    let mut sweeps = 0usize;
    while n >= low {
        let nu = n as usize;
        let mut l = n;
        while l > low {
            let lu = l as usize;
            s = h[lu - 1][lu - 1].abs() + h[lu][lu].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[lu][lu - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            h[nu][nu] += exshift;
            d[nu] = h[nu][nu];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[nu][nu] += exshift;
            h[nu - 1][nu - 1] += exshift;
            x = h[nu][nu];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[nu][nu - 1];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[nu - 1][j];
                    h[nu - 1][j] = q * z + p * h[nu][j];
                    h[nu][j] = q * h[nu][j] - p * z;
                }
                for row in h.iter_mut().take(nu + 1) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
                for row in v.iter_mut().take(high + 1) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::NoConvergence(format!(
                    "QR iteration exceeded {max_sweeps} sweeps with {} eigenvalues undeflated",
                    n + 1
                )));
            }
            let lu = l as usize;
            x = h[nu][nu];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = h[nu - 1][nu - 1];
                w = h[nu][nu - 1] * h[nu - 1][nu];
            }
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[i][i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[i][i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;

            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == lu {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[k][k - 1] = -s * x;
                    } else if l != m as isize {
                        h[k][k - 1] = -h[k][k - 1];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[k][j] + q * h[k + 1][j];
                        if notlast {
                            p += r * h[k + 2][j];
                            h[k + 2][j] -= p * z;
                        }
                        h[k][j] -= p * x;
                        h[k + 1][j] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[i][k] + y * h[i][k + 1];
                        if notlast {
                            p += z * h[i][k + 2];
                            h[i][k + 2] -= p * r;
                        }
                        h[i][k] -= p;
                        h[i][k + 1] -= p * q;
                    }
                    for row in v.iter_mut().take(high + 1) {
                        p = x * row[k] + y * row[k + 1];
                        if notlast {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k] -= p;
                        row[k + 1] -= p * q;
                    }
                }
                k += 1;
            }
        }
        if !h.iter().all(|row| row.iter().all(|v| v.is_finite())) {
            return Err(Error::NoConvergence("QR iteration produced non-finite values".into()));
        }
    }

    if norm == 0.0 {
        return Ok((d, e));
    }

    // Back-substitution on the quasi-triangular form.
    for nu in (0..nn).rev() {
        p = d[nu];
        q = e[nu];
        if q == 0.0 {
            let mut l = nu;
            h[nu][nu] = 1.0;
            for i in (0..nu).rev() {
                w = h[i][i] - p;
                r = (l..=nu).map(|j| h[i][j] * h[j][nu]).sum();
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[i][nu] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        q = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        t = (x * s - z * r) / q;
                        h[i][nu] = t;
                        h[i + 1][nu] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    t = h[i][nu].abs();
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(nu + 1).skip(i) {
                            row[nu] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            let mut l = nu - 1;
            if h[nu][nu - 1].abs() > h[nu - 1][nu].abs() {
                h[nu - 1][nu - 1] = q / h[nu][nu - 1];
                h[nu - 1][nu] = -(h[nu][nu] - p) / h[nu][nu - 1];
            } else {
                let (cr, ci) = cdiv(0.0, -h[nu - 1][nu], h[nu - 1][nu - 1] - p, q);
                h[nu - 1][nu - 1] = cr;
                h[nu - 1][nu] = ci;
            }
            h[nu][nu - 1] = 0.0;
            h[nu][nu] = 1.0;
            for i in (0..nu.saturating_sub(1)).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=nu {
                    ra += h[i][j] * h[j][nu - 1];
                    sa += h[i][j] * h[j][nu];
                }
                w = h[i][i] - p;
                if e[i] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[i][nu - 1] = cr;
                        h[i][nu] = ci;
                    } else {
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                        let vi = (d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h[i][nu - 1] = cr;
                        h[i][nu] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[i + 1][nu - 1] = (-ra - w * h[i][nu - 1] + q * h[i][nu]) / x;
                            h[i + 1][nu] = (-sa - w * h[i][nu] - q * h[i][nu - 1]) / x;
                        } else {
                            let (cr, ci) =
                                cdiv(-r - y * h[i][nu - 1], -s - y * h[i][nu], z, q);
                            h[i + 1][nu - 1] = cr;
                            h[i + 1][nu] = ci;
                        }
                    }
                    t = h[i][nu - 1].abs().max(h[i][nu].abs());
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(nu + 1).skip(i) {
                            row[nu - 1] /= t;
                            row[nu] /= t;
                        }
                    }
                }
            }
        }
    }

    for j in (0..nn).rev() {
        for i in 0..=high {
            z = (0..=j.min(high)).map(|k| v[i][k] * h[k][j]).sum();
            v[i][j] = z;
        }
    }
    Ok((d, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &Matrix, dec: &EigenDecomposition) -> f64 {
        let n = a.rows();
        let ac = a.to_complex();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let lam = dec.values[k];
            let mut r2 = 0.0;
            let mut v2 = 0.0;
            for i in 0..n {
                let mut s = C64::ZERO;
                for j in 0..n {
                    s += ac[(i, j)] * dec.vectors[(j, k)];
                }
                r2 += (s - lam * dec.vectors[(i, k)]).norm_sqr();
                v2 += dec.vectors[(i, k)].norm_sqr();
            }
            worst = worst.max((r2 / v2).sqrt());
        }
        worst
    }

    #[test]
    fn norm_is_max_row_sum() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap();
        assert_eq!(m.norm_inf(), 3.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn inverse_of_small_matrix() {
        let m = Matrix::from_rows(&[vec![4.0, 7.0], vec![2.0, 6.0]]).unwrap();
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-14);
            }
        }
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]])
            .unwrap()
            .inverse()
            .is_err());
    }

    #[test]
    fn eigen_handles_mixed_spectrum() {
        let a = Matrix::from_rows(&[
            vec![-1.0, 2.0, 0.3, 0.0],
            vec![-3.0, -0.5, 1.0, 2.0],
            vec![0.1, 0.0, -2.0, 0.7],
            vec![1.0, -1.0, 0.5, 0.25],
        ])
        .unwrap();
        let dec = eigen(&a).unwrap();
        assert_eq!(dec.values.len(), 4);
        assert!(residual(&a, &dec) < 1e-10 * a.norm_inf());
        let trace: f64 = a.diagonal().iter().sum();
        let sum: C64 = dec.values.iter().fold(C64::ZERO, |s, &v| s + v);
        assert!((sum.re - trace).abs() < 1e-12 && sum.im.abs() < 1e-12);
    }
}
