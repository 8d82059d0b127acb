//! Two-parameter Mittag-Leffler function E_{α,β}, scalar and matrix.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::contour;
use super::gamma::rgamma;
use crate::complex::C64;
use crate::error::{Error, Result};
use crate::linalg::{eigen, Matrix};

/// Truncation and branch-selection controls for Mittag-Leffler evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLEvalPolicy {
    /// Relative size of the last retained series term.
    pub series_tol: f64,
    pub series_max_terms: usize,
    /// |z| at and beyond which real negative arguments use the asymptotic
    /// expansion.
    pub asymptotic_switch_radius: f64,
    pub asymptotic_terms: usize,
    /// |z| (or ‖M‖) up to which the power series is summed directly. Beyond
    /// it the series loses digits to cancellation and contour inversion is
    /// used instead.
    pub series_radius: f64,
    /// Target relative tolerance of the contour inversion.
    pub contour_tol: f64,
}

impl Default for MLEvalPolicy {
    fn default() -> Self {
        MLEvalPolicy {
            series_tol: 1e-16,
            series_max_terms: 500,
            asymptotic_switch_radius: 25.0,
            asymptotic_terms: 10,
            series_radius: 1.0,
            contour_tol: 1e-15,
        }
    }
}

impl MLEvalPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0) {
            return Err(Error::Domain("series_tol must be positive".into()));
        }
        if self.series_max_terms < 50 {
            return Err(Error::Domain("series_max_terms must be at least 50".into()));
        }
        if !(self.asymptotic_switch_radius > 0.0) {
            return Err(Error::Domain(
                "asymptotic_switch_radius must be positive".into(),
            ));
        }
        if self.asymptotic_terms < 2 {
            return Err(Error::Domain("asymptotic_terms must be at least 2".into()));
        }
        if !(self.series_radius > 0.0) || !(self.contour_tol > 0.0 && self.contour_tol < 1.0) {
            return Err(Error::Domain(
                "series_radius must be positive and contour_tol in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Which evaluation route produced a scalar value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlBranch {
    Series,
    Asymptotic,
    Contour,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlWarning {
    /// Large |z| with |arg z| ≤ απ/2, where the function grows exponentially
    /// and no asymptotic cross-check applies.
    Accuracy,
    /// The eigenvector matrix of the diagonalization route is ill-conditioned.
    Conditioning,
}

/// A computed value plus an optional non-fatal status.
#[derive(Clone, Debug, PartialEq)]
pub struct MlEval<T> {
    pub value: T,
    pub warning: Option<MlWarning>,
}

impl<T> MlEval<T> {
    fn ok(value: T) -> Self {
        MlEval {
            value,
            warning: None,
        }
    }
}

/// E_{α,β}(z), choosing the branch from the policy.
pub fn ml_scalar(alpha: f64, beta: f64, z: C64, policy: &MLEvalPolicy) -> Result<MlEval<C64>> {
    let branch = select_branch(z, policy);
    let value = ml_scalar_branch(alpha, beta, z, policy, branch)?;
    let warning = (z.abs() >= policy.asymptotic_switch_radius
        && z.arg().abs() <= alpha * PI / 2.0)
        .then_some(MlWarning::Accuracy);
    Ok(MlEval { value, warning })
}

/// Real-argument convenience wrapper.
pub fn ml_real(alpha: f64, beta: f64, x: f64, policy: &MLEvalPolicy) -> Result<f64> {
    Ok(ml_scalar(alpha, beta, C64::real(x), policy)?.value.re)
}

fn select_branch(z: C64, policy: &MLEvalPolicy) -> MlBranch {
    let r = z.abs();
    if r <= policy.series_radius {
        MlBranch::Series
    } else if z.im == 0.0 && z.re <= -policy.asymptotic_switch_radius {
        MlBranch::Asymptotic
    } else {
        MlBranch::Contour
    }
}

/// E_{α,β}(z) through an explicitly chosen branch, bypassing selection.
pub fn ml_scalar_branch(
    alpha: f64,
    beta: f64,
    z: C64,
    policy: &MLEvalPolicy,
    branch: MlBranch,
) -> Result<C64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !beta.is_finite() || !z.is_finite() {
        return Err(Error::Domain("non-finite Mittag-Leffler argument".into()));
    }
    if z == C64::ZERO {
        return Ok(C64::real(rgamma(beta)));
    }
    match branch {
        MlBranch::Series => series(alpha, beta, z, policy),
        MlBranch::Asymptotic => Ok(asymptotic(alpha, beta, z, policy.asymptotic_terms)),
        MlBranch::Contour if alpha == 1.0 && beta == 1.0 => Ok(z.exp()),
        MlBranch::Contour => {
            let v = contour::ml_inversion(alpha, beta, z, policy.contour_tol.ln());
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NoConvergence(format!(
                    "contour inversion overflowed at z = {z}"
                )))
            }
        }
    }
}

fn series(alpha: f64, beta: f64, z: C64, policy: &MLEvalPolicy) -> Result<C64> {
    let mut sum = C64::real(rgamma(beta));
    let mut zk = C64::ONE;
    let mut small_run = 0;
    for k in 1..policy.series_max_terms {
        zk *= z;
        let term = zk.scale(rgamma(alpha * k as f64 + beta));
        sum += term;
        if term.abs() <= policy.series_tol * sum.abs() {
            small_run += 1;
            if small_run >= 2 {
                return Ok(sum);
            }
        } else {
            small_run = 0;
        }
        if zk == C64::ZERO {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence(format!(
        "Mittag-Leffler series for z = {z} not converged after {} terms",
        policy.series_max_terms
    )))
}

/// -Σ_{k=1..K} z^{-k}/Γ(β-αk), plus the exponential contribution
/// (1/α) z^{(1-β)/α} exp(z^{1/α}) when |arg z| ≤ απ.
fn asymptotic(alpha: f64, beta: f64, z: C64, terms: usize) -> C64 {
    let zinv = z.inv();
    let mut zk = C64::ONE;
    let mut sum = C64::ZERO;
    for k in 1..=terms {
        zk *= zinv;
        sum -= zk.scale(rgamma(beta - alpha * k as f64));
    }
    if z.arg().abs() <= alpha * PI * (1.0 + 1e-15) {
        sum += z.powf((1.0 - beta) / alpha) * z.powf(1.0 / alpha).exp() / alpha;
    }
    if z.im == 0.0 {
        C64::real(sum.re)
    } else {
        sum
    }
}

/// Route used for a matrix argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixMethod {
    /// Series for small norms, elementwise for diagonal input, contour
    /// inversion otherwise (diagonalization when the contour would sit too
    /// far right for round-off control).
    Auto,
    /// Term-recursive power series.
    Series,
    /// Trapezoidal contour inversion with matrix resolvents.
    Contour,
    /// V diag(E(λ)) V^{-1}.
    Diagonalize,
}

const CONDITION_LIMIT: f64 = 1e8;

/// E_{α,β}(M) = Σ M^k / Γ(αk+β), via the automatically selected route.
pub fn ml_matrix(alpha: f64, beta: f64, m: &Matrix, policy: &MLEvalPolicy) -> Result<MlEval<Matrix>> {
    ml_matrix_with(alpha, beta, m, policy, MatrixMethod::Auto)
}

pub fn ml_matrix_with(
    alpha: f64,
    beta: f64,
    m: &Matrix,
    policy: &MLEvalPolicy,
    method: MatrixMethod,
) -> Result<MlEval<Matrix>> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "Mittag-Leffler of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let n = m.rows();
    match method {
        MatrixMethod::Series => matrix_series(alpha, beta, m, policy).map(MlEval::ok),
        MatrixMethod::Contour => {
            let spectrum = eigen(m).map(|d| d.values).unwrap_or_else(|_| {
                // Without a spectrum, bound every singularity by the norm.
                vec![C64::real(m.norm_inf())]
            });
            let params =
                contour::matrix_contour_params(alpha, beta, &spectrum, policy.contour_tol.ln());
            contour::ml_matrix_inversion(alpha, beta, m, params).map(MlEval::ok)
        }
        MatrixMethod::Diagonalize => diagonalize(alpha, beta, m, policy),
        MatrixMethod::Auto => {
            if n == 1 {
                let v = ml_scalar(alpha, beta, C64::real(m[(0, 0)]), policy)?;
                return Ok(MlEval {
                    value: Matrix::scalar(v.value.re),
                    warning: v.warning,
                });
            }
            if m.is_diagonal() {
                let mut out = Matrix::zeros(n, n);
                let mut warning = None;
                for i in 0..n {
                    let v = ml_scalar(alpha, beta, C64::real(m[(i, i)]), policy)?;
                    out[(i, i)] = v.value.re;
                    warning = warning.or(v.warning);
                }
                return Ok(MlEval { value: out, warning });
            }
            if m.norm_inf() <= policy.series_radius {
                return matrix_series(alpha, beta, m, policy).map(MlEval::ok);
            }
            let spectrum = match eigen(m) {
                Ok(d) => d.values,
                Err(_) => {
                    return ml_matrix_with(alpha, beta, m, policy, MatrixMethod::Contour);
                }
            };
            // A contour far to the right multiplies round-off by e^μ.
            let level = contour::singularity_level(alpha, &spectrum);
            if level <= ROUNDOFF_LEVEL {
                let params =
                    contour::matrix_contour_params(alpha, beta, &spectrum, policy.contour_tol.ln());
                return contour::ml_matrix_inversion(alpha, beta, m, params).map(MlEval::ok);
            }
            match diagonalize(alpha, beta, m, policy) {
                Ok(v) if v.warning.is_none() => Ok(v),
                _ => ml_matrix_with(alpha, beta, m, policy, MatrixMethod::Contour),
            }
        }
    }
}

// Contour levels up to e^8 ≈ 3000 times machine epsilon of absolute error.
const ROUNDOFF_LEVEL: f64 = 8.0;

fn matrix_series(alpha: f64, beta: f64, m: &Matrix, policy: &MLEvalPolicy) -> Result<Matrix> {
    let n = m.rows();
    let mut sum = Matrix::identity(n).scale(rgamma(beta));
    let mut power = Matrix::identity(n);
    let mut small_run = 0;
    for k in 1..policy.series_max_terms {
        power = power.matmul(m);
        if !power.is_finite() {
            return Err(Error::NoConvergence(
                "matrix power overflowed in Mittag-Leffler series".into(),
            ));
        }
        let term = power.scale(rgamma(alpha * k as f64 + beta));
        sum = sum.add(&term);
        if power.is_zero() {
            return Ok(sum);
        }
        if term.norm_inf() <= policy.series_tol * sum.norm_inf() {
            small_run += 1;
            if small_run >= 2 {
                return Ok(sum);
            }
        } else {
            small_run = 0;
        }
    }
    Err(Error::NoConvergence(format!(
        "matrix Mittag-Leffler series not converged after {} terms",
        policy.series_max_terms
    )))
}

fn diagonalize(alpha: f64, beta: f64, m: &Matrix, policy: &MLEvalPolicy) -> Result<MlEval<Matrix>> {
    let n = m.rows();
    let dec = eigen(m)?;
    let vinv = dec.vectors.inverse()?;
    let cond = dec.vectors.norm_inf() * vinv.norm_inf();
    let mut fvals = Vec::with_capacity(n);
    for &lam in &dec.values {
        fvals.push(ml_scalar(alpha, beta, lam, policy)?.value);
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut s = C64::ZERO;
            for k in 0..n {
                s += dec.vectors[(i, k)] * fvals[k] * vinv[(k, j)];
            }
            out[(i, j)] = s.re;
        }
    }
    let warning = (!(cond <= CONDITION_LIMIT)).then_some(MlWarning::Conditioning);
    Ok(MlEval { value: out, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fraccalc::gamma::{beta_fn, gamma_fn};

    const FIXTURES: &str = include_str!("../../tests/fixtures/ml_fixtures.txt");

    struct MlCase {
        alpha: f64,
        beta: f64,
        z: C64,
        value: C64,
    }

    fn ml_cases() -> Vec<MlCase> {
        FIXTURES
            .lines()
            .filter(|l| l.starts_with("ml "))
            .map(|l| {
                let v: Vec<f64> = l.split_whitespace().skip(1).map(|s| s.parse().unwrap()).collect();
                MlCase {
                    alpha: v[0],
                    beta: v[1],
                    z: C64::new(v[2], v[3]),
                    value: C64::new(v[4], v[5]),
                }
            })
            .collect()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn gamma_and_beta_fixtures() {
        for l in FIXTURES.lines() {
            let v: Vec<&str> = l.split_whitespace().collect();
            match v[0] {
                "gamma" => {
                    let x: f64 = v[1].parse().unwrap();
                    let want: f64 = v[2].parse().unwrap();
                    let got = gamma_fn(x).unwrap();
                    assert!((got - want).abs() <= 1e-12 * want.abs(), "gamma({x}) = {got}, want {want}");
                }
                "beta" => {
                    let want: f64 = v[3].parse().unwrap();
                    let got = beta_fn(v[1].parse().unwrap(), v[2].parse().unwrap()).unwrap();
                    assert!((got - want).abs() <= 1e-12 * want);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn scalar_fixtures() {
        let policy = MLEvalPolicy::default();
        for c in ml_cases() {
            let got = ml_scalar(c.alpha, c.beta, c.z, &policy).unwrap().value;
            // The truncated asymptotic expansion is only accurate to about
            // |z|^{-K-1} relative to its leading term.
            let err = match select_branch(c.z, &policy) {
                MlBranch::Asymptotic => rel(got, c.value) / 1e-6,
                _ => (got - c.value).abs() / (1.0 + c.value.abs()) / 1e-12,
            };
            assert!(
                err < 1.0,
                "E_({}, {})({}) = {got}, want {}",
                c.alpha,
                c.beta,
                c.z,
                c.value
            );
        }
    }

    #[test]
    fn contour_matches_fixtures_in_asymptotic_region() {
        let policy = MLEvalPolicy::default();
        for c in ml_cases().into_iter().filter(|c| c.z.re <= -25.0) {
            let got = ml_scalar_branch(c.alpha, c.beta, c.z, &policy, MlBranch::Contour).unwrap();
            assert!((got - c.value).abs() < 1e-13 * (1.0 + c.value.abs()));
        }
    }

    #[test]
    fn branch_continuity_band() {
        let policy = MLEvalPolicy::default();
        for alpha in [0.6, 0.75, 0.9, 1.0] {
            for beta in [0.75, 1.0, 1.75] {
                let mut x = -26.0;
                while x <= -24.0 {
                    let z = C64::real(x);
                    let a = ml_scalar_branch(alpha, beta, z, &policy, MlBranch::Asymptotic).unwrap();
                    let c = ml_scalar_branch(alpha, beta, z, &policy, MlBranch::Contour).unwrap();
                    assert!(rel(a, c) < 1e-6, "alpha={alpha} beta={beta} x={x}");
                    x += 0.25;
                }
            }
        }
    }

    #[test]
    fn recurrence_holds() {
        let policy = MLEvalPolicy::default();
        for alpha in [0.6, 0.75, 0.9] {
            for beta in [0.75, 1.0] {
                for i in 0..=80 {
                    let x = -10.0 + 0.25 * i as f64;
                    let e = ml_real(alpha, beta, x, &policy).unwrap();
                    let rhs = rgamma(beta) + x * ml_real(alpha, alpha + beta, x, &policy).unwrap();
                    assert!((e - rhs).abs() <= 1e-9 * (1.0 + e.abs()), "alpha={alpha} beta={beta} x={x}");
                }
            }
        }
    }

    #[test]
    fn exponential_reduction() {
        let policy = MLEvalPolicy::default();
        for i in 0..=80 {
            let x = -20.0 + 0.5 * i as f64;
            let e = ml_real(1.0, 1.0, x, &policy).unwrap();
            assert!(((e - x.exp()) / x.exp()).abs() < 1e-10, "x={x}: {e}");
        }
        let z = C64::new(0.3, 2.0);
        let e = ml_scalar(1.0, 1.0, z, &policy).unwrap().value;
        assert!(rel(e, z.exp()) < 1e-12);
    }

    #[test]
    fn accuracy_warning_on_growth_sector() {
        let policy = MLEvalPolicy::default();
        assert_eq!(ml_scalar(0.75, 1.0, C64::real(30.0), &policy).unwrap().warning, Some(MlWarning::Accuracy));
        assert_eq!(ml_scalar(0.75, 1.0, C64::real(-30.0), &policy).unwrap().warning, None);
        assert_eq!(ml_scalar(0.75, 1.0, C64::real(3.0), &policy).unwrap().warning, None);
    }

    #[test]
    fn zero_argument() {
        let policy = MLEvalPolicy::default();
        let v = ml_real(0.75, 0.75, 0.0, &policy).unwrap();
        assert!((v - 1.0 / gamma_fn(0.75).unwrap()).abs() < 1e-15);
        assert!(ml_real(0.0, 1.0, 1.0, &policy).is_err());
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.sub(b).norm_inf() <= tol * (1.0 + b.norm_inf())
    }

    #[test]
    fn matrix_zero_and_diagonal() {
        let policy = MLEvalPolicy::default();
        let z = ml_matrix(0.75, 1.75, &Matrix::zeros(3, 3), &policy).unwrap().value;
        assert!(close(&z, &Matrix::identity(3).scale(rgamma(1.75)), 1e-15));
        let d = Matrix::from_diag(&[-1.0, -2.0]);
        for method in [MatrixMethod::Auto, MatrixMethod::Series, MatrixMethod::Contour, MatrixMethod::Diagonalize] {
            let e = ml_matrix_with(0.75, 0.75, &d, &policy, method).unwrap().value;
            let want = Matrix::from_diag(&[ml_real(0.75, 0.75, -1.0, &policy).unwrap(), ml_real(0.75, 0.75, -2.0, &policy).unwrap()]);
            assert!(close(&e, &want, 1e-10), "{method:?}");
        }
    }

    #[test]
    fn matrix_rotation_exponential() {
        let policy = MLEvalPolicy::default();
        let m = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        let (s, c) = 1f64.sin_cos();
        let want = Matrix::from_rows(&[[c, s], [-s, c]]).unwrap();
        for method in [MatrixMethod::Auto, MatrixMethod::Series, MatrixMethod::Contour, MatrixMethod::Diagonalize] {
            let e = ml_matrix_with(1.0, 1.0, &m, &policy, method).unwrap().value;
            assert!(close(&e, &want, 1e-12), "{method:?}");
        }
    }

    #[test]
    fn matrix_similarity_invariance() {
        let policy = MLEvalPolicy::default();
        let m = Matrix::from_rows(&[[-3.0, 1.0, 0.0], [0.5, -2.0, 0.7], [0.0, -1.0, -4.0]]).unwrap();
        let p = Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.0, -0.2, 1.0]]).unwrap();
        let pinv = p.inverse().unwrap();
        let lhs = ml_matrix(0.75, 0.75, &p.matmul(&m).matmul(&pinv), &policy).unwrap().value;
        let rhs = p.matmul(&ml_matrix(0.75, 0.75, &m, &policy).unwrap().value).matmul(&pinv);
        assert!(close(&lhs, &rhs, 1e-7));
    }

    #[test]
    fn matrix_methods_agree_for_large_norm() {
        let policy = MLEvalPolicy::default();
        let m = Matrix::from_rows(&[[-20.0, 3.0], [-2.0, -15.0]]).unwrap();
        let c = ml_matrix_with(0.8, 0.8, &m, &policy, MatrixMethod::Contour).unwrap().value;
        let d = ml_matrix_with(0.8, 0.8, &m, &policy, MatrixMethod::Diagonalize).unwrap().value;
        let a = ml_matrix(0.8, 0.8, &m, &policy).unwrap().value;
        assert!(close(&c, &d, 1e-11));
        assert!(close(&a, &d, 1e-11));
        let s = ml_matrix_with(0.8, 0.8, &m.scale(0.05), &policy, MatrixMethod::Series).unwrap().value;
        let c = ml_matrix_with(0.8, 0.8, &m.scale(0.05), &policy, MatrixMethod::Contour).unwrap().value;
        assert!(close(&s, &c, 1e-12));
    }

    #[test]
    fn policy_validation() {
        assert!(MLEvalPolicy::default().validate().is_ok());
        let bad = MLEvalPolicy { series_max_terms: 10, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MLEvalPolicy { asymptotic_terms: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_square_matrix_rejected() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(ml_matrix(0.75, 0.75, &m, &MLEvalPolicy::default()), Err(Error::Shape(_))));
    }
}
