//! The coefficient triple (g, b, σ): built-in families and empirical
//! verifiers for the Lipschitz and vanishing-at-zero conditions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// User-supplied coefficient: writes f(t, x) into the output slice.
pub type CustomFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A map (t, x) -> R^n.
#[derive(Clone)]
pub enum Field {
    Zero,
    /// x -> M x
    Linear(Matrix),
    /// x -> c sin(x), componentwise
    Sine(f64),
    /// x -> s, independent of x; violates the vanishing condition.
    Constant(Vec<f64>),
    Custom(CustomFn),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Zero => write!(f, "Zero"),
            Field::Linear(m) => write!(f, "Linear({:?})", m.to_rows()),
            Field::Sine(c) => write!(f, "Sine({c})"),
            Field::Constant(s) => write!(f, "Constant({s:?})"),
            Field::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Field {
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Field::Zero => out.fill(0.0),
            Field::Linear(m) => m.matvec_into(x, out),
            Field::Sine(c) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = c * xi.sin();
                }
            }
            Field::Constant(s) => out.copy_from_slice(s),
            Field::Custom(f) => f(t, x, out),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(t, x, &mut out);
        out
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Field::Zero => true,
            Field::Linear(m) => m.is_zero(),
            Field::Sine(c) => *c == 0.0,
            Field::Constant(s) => s.iter().all(|v| *v == 0.0),
            Field::Custom(_) => false,
        }
    }

    /// Dimension the field is tied to, if any.
    fn dim(&self) -> Option<usize> {
        match self {
            Field::Linear(m) => Some(m.rows()),
            Field::Constant(s) => Some(s.len()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Zero,
    Linear,
    BoundedSmooth,
    AdditiveNoise,
    Custom,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyTag::Zero => "zero",
            FamilyTag::Linear => "linear",
            FamilyTag::BoundedSmooth => "bounded_smooth",
            FamilyTag::AdditiveNoise => "additive_noise",
            FamilyTag::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// g, b, σ with their declared Lipschitz constants.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub g: Field,
    pub b: Field,
    pub sigma: Field,
    pub l_g: f64,
    pub l_b: f64,
    pub l_sigma: f64,
    pub family: FamilyTag,
    /// Whether the Lipschitz and vanishing conditions are known to hold.
    /// Built-in families satisfy them by construction; custom ones only
    /// after [`CoefficientSet::verify`] succeeds.
    pub assumptions_verified: bool,
}

impl CoefficientSet {
    pub fn zero() -> Self {
        CoefficientSet {
            g: Field::Zero,
            b: Field::Zero,
            sigma: Field::Zero,
            l_g: 0.0,
            l_b: 0.0,
            l_sigma: 0.0,
            family: FamilyTag::Zero,
            assumptions_verified: true,
        }
    }

    /// Custom coefficients with declared constants; unverified until
    /// [`CoefficientSet::verify`] is called.
    pub fn custom(g: Field, b: Field, sigma: Field, l_g: f64, l_b: f64, l_sigma: f64) -> Result<Self> {
        for (name, l) in [("l_g", l_g), ("l_b", l_b), ("l_sigma", l_sigma)] {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        Ok(CoefficientSet {
            g,
            b,
            sigma,
            l_g,
            l_b,
            l_sigma,
            family: FamilyTag::Custom,
            assumptions_verified: false,
        })
    }

    /// Test-only family: g = b = 0 and constant noise σ ≡ s. Breaks the
    /// vanishing condition and must be enabled explicitly.
    pub fn additive_noise(s: Vec<f64>, allow_nonvanishing: bool) -> Result<Self> {
        if !allow_nonvanishing {
            return Err(Error::Domain(
                "additive noise does not vanish at x = 0; enable allow_nonvanishing".into(),
            ));
        }
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("noise intensity must be finite".into()));
        }
        Ok(CoefficientSet {
            sigma: Field::Constant(s),
            family: FamilyTag::AdditiveNoise,
            assumptions_verified: false,
            ..CoefficientSet::zero()
        })
    }

    pub fn fields(&self) -> [(&'static str, &Field, f64); 3] {
        [("g", &self.g, self.l_g), ("b", &self.b, self.l_b), ("sigma", &self.sigma, self.l_sigma)]
    }

    /// Checks every field's dimension against `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        for (name, f, _) in self.fields() {
            if let Some(d) = f.dim() {
                if d != n {
                    return Err(Error::Shape(format!("coefficient {name} has dimension {d}, system has {n}")));
                }
            }
        }
        Ok(())
    }

    /// Runs both verifiers on all three fields and records the outcome.
    pub fn verify(&mut self, n: usize, t_end: f64, seed: u64) -> bool {
        let ok = self.fields().iter().all(|(_, f, l)| {
            verify_lipschitz(f, *l, n, 200, t_end, seed).pass && verify_vanishing(f, n, t_end, 64)
        });
        self.assumptions_verified = ok;
        ok
    }
}

/// g(t,x) = Gx, b(t,x) = Bx, σ(t,x) = Sx with max-row-sum norms as constants.
pub fn make_linear(g: Matrix, b: Matrix, s: Matrix) -> Result<CoefficientSet> {
    let n = g.rows();
    for (name, m) in [("G", &g), ("B", &b), ("S", &s)] {
        if !m.is_square() || m.rows() != n {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, expected {n}x{n}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::Domain(format!("{name} has non-finite entries")));
        }
    }
    if g.is_zero() && b.is_zero() && s.is_zero() {
        return Ok(CoefficientSet::zero());
    }
    Ok(CoefficientSet {
        l_g: g.norm_inf(),
        l_b: b.norm_inf(),
        l_sigma: s.norm_inf(),
        g: Field::Linear(g),
        b: Field::Linear(b),
        sigma: Field::Linear(s),
        family: FamilyTag::Linear,
        assumptions_verified: true,
    })
}

/// Each coefficient is c sin(x) componentwise, Lipschitz with constant |c|.
pub fn make_bounded_smooth(c_g: f64, c_b: f64, c_s: f64) -> Result<CoefficientSet> {
    if ![c_g, c_b, c_s].iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("bounded_smooth constants must be finite".into()));
    }
    Ok(CoefficientSet {
        g: Field::Sine(c_g),
        b: Field::Sine(c_b),
        sigma: Field::Sine(c_s),
        l_g: c_g.abs(),
        l_b: c_b.abs(),
        l_sigma: c_s.abs(),
        family: FamilyTag::BoundedSmooth,
        assumptions_verified: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzWitness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub pass: bool,
    /// The pair attaining `max_ratio`.
    pub witness: Option<LipschitzWitness>,
}

const BALL_RADIUS: f64 = 10.0;

fn norm_max(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ball_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = BALL_RADIUS * rng.random::<f64>().powf(1.0 / n as f64);
    v.iter_mut().for_each(|x| *x *= r / len);
    v
}

/// Random search for max ‖f(t,x) − f(t,y)‖/‖x − y‖ (max norm) over pairs in
/// the ball of radius 10 and t ∈ [0, t_end]. Half of the pairs differ along a
/// random sign vector, which is where linear maps attain their row-sum norm.
pub fn verify_lipschitz(
    f: &Field,
    l_declared: f64,
    n: usize,
    n_trials: usize,
    t_end: f64,
    seed: u64,
) -> LipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LipschitzWitness> = None;
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    for trial in 0..n_trials.max(100) {
        let t = t_end * rng.random::<f64>();
        let x = ball_point(&mut rng, n);
        let y = if trial % 2 == 0 {
            ball_point(&mut rng, n)
        } else {
            let h = 10f64.powf(-3.0 * rng.random::<f64>());
            x.iter().map(|xi| xi + if rng.random::<bool>() { h } else { -h }).collect()
        };
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let den = norm_max(&dx);
        if den == 0.0 {
            continue;
        }
        f.eval_into(t, &x, &mut fx);
        f.eval_into(t, &y, &mut fy);
        let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let ratio = norm_max(&df) / den;
        if best.as_ref().is_none_or(|b| ratio > b.ratio) {
            best = Some(LipschitzWitness { t, x, y, ratio });
        }
    }
    let max_ratio = best.as_ref().map_or(0.0, |w| w.ratio);
    LipschitzReport {
        max_ratio,
        pass: max_ratio <= l_declared * (1.0 + 1e-9),
        witness: best,
    }
}

/// True iff ‖f(t, 0)‖ ≤ 1e-14 at n_nodes + 1 uniform times in [0, t_end].
pub fn verify_vanishing(f: &Field, n: usize, t_end: f64, n_nodes: usize) -> bool {
    let zero = vec![0.0; n];
    let mut out = vec![0.0; n];
    (0..=n_nodes).all(|i| {
        let t = t_end * i as f64 / n_nodes.max(1) as f64;
        f.eval_into(t, &zero, &mut out);
        norm_max(&out) <= 1e-14
    })
}
