//! Closed-form stability constants: Θ, the contraction constant, the δ–ε
//! margin and the Caputo mean-square criterion.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coefficients::FamilyTag;
use crate::error::{Error, Result};
use crate::fraccalc::{beta_fn, FractionalOrder};
use crate::simulator::SystemSpec;
use crate::spectral::{eigenvalues, ml_norm_sup, sector_check, SectorVerdict};

/// Safety factor applied to the largest admissible δ.
pub const DELTA_SAFETY: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionInputs {
    pub order: FractionalOrder,
    pub t_end: f64,
    pub l_g: f64,
    pub l_b: f64,
    pub l_sigma: f64,
    pub a_norm: f64,
    pub m: f64,
}

impl CriterionInputs {
    pub fn validate(&self) -> Result<()> {
        self.order.validate()?;
        for (name, v) in [("t_end", self.t_end), ("a_norm", self.a_norm), ("m", self.m)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("l_g", self.l_g), ("l_b", self.l_b), ("l_sigma", self.l_sigma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn p(&self) -> f64 {
        self.order.p_f64()
    }

    fn alpha(&self) -> f64 {
        self.order.alpha
    }

    /// 4^{p−1} L_g^p
    pub fn neutral_factor(&self) -> f64 {
        4f64.powf(self.p() - 1.0) * self.l_g.powf(self.p())
    }
}

/// C_p = (p(p−1)/2)^{p/2}
pub fn c_p(p: f64) -> f64 {
    (p * (p - 1.0) / 2.0).powf(p / 2.0)
}

/// Θ = 4^{p−1}[ L_g^p‖A‖^p M^p B(q,q)^{p−1} T^{pα−1}
///            + L_b^p M^p B(q,q)^{p−1} T^{pα−1}
///            + C_p L_σ^p M^p T^{p(α−1)+p/2} B(2α−1,2α−1)^{p/2} ],
/// q = (pα−1)/(p−1).
pub fn theta(inp: &CriterionInputs) -> Result<f64> {
    inp.validate()?;
    let (p, a, t) = (inp.p(), inp.alpha(), inp.t_end);
    let q = (p * a - 1.0) / (p - 1.0);
    let e = 2.0 * a - 1.0;
    if !(e > 0.0) || !(q > 0.0) {
        return Err(Error::Domain(format!("2 alpha - 1 = {e} and q = {q} must be positive")));
    }
    let mp = inp.m.powf(p);
    let bq = beta_fn(q, q)?.powf(p - 1.0) * t.powf(p * a - 1.0);
    let drift = (inp.l_g * inp.a_norm).powf(p) * mp * bq + inp.l_b.powf(p) * mp * bq;
    let noise = c_p(p) * inp.l_sigma.powf(p) * mp * t.powf(p * (a - 1.0) + p / 2.0) * beta_fn(e, e)?.powf(p / 2.0);
    Ok(4f64.powf(p - 1.0) * (drift + noise))
}

/// Θ / (1 − 4^{p−1} L_g^p).
pub fn contraction_constant(inp: &CriterionInputs) -> Result<f64> {
    let th = theta(inp)?;
    let nf = inp.neutral_factor();
    if nf >= 1.0 {
        return Err(Error::NeutralTooStrong(nf));
    }
    Ok(th / (1.0 - nf))
}

/// 6^{p−1}[ L_g^p + L_g^p‖A‖^p M^p r^{p−1} T^{pα−1} + L_b^p M^p r^{p−1} T^{pα−1}
///        + C_p L_σ^p M^p (T^{2α−1}/(2α−1))^{p/2} ],  r = (p−1)/(pα−1).
pub fn k_stab(inp: &CriterionInputs) -> Result<f64> {
    inp.validate()?;
    let (p, a) = (inp.p(), inp.alpha());
    let r = (p - 1.0) / (p * a - 1.0);
    stab_bracket(inp, r.powf(p - 1.0))
}

/// [`k_stab`] with r^{p−1} replaced by the beta-function factor B(q,q)^{p−1}
/// used in Θ.
pub fn k_stab_beta_form(inp: &CriterionInputs) -> Result<f64> {
    inp.validate()?;
    let p = inp.p();
    let q = (p * inp.alpha() - 1.0) / (p - 1.0);
    stab_bracket(inp, beta_fn(q, q)?.powf(p - 1.0))
}

fn stab_bracket(inp: &CriterionInputs, memory: f64) -> Result<f64> {
    let (p, a, t) = (inp.p(), inp.alpha(), inp.t_end);
    let e = 2.0 * a - 1.0;
    let mp = inp.m.powf(p);
    let tp = t.powf(p * a - 1.0);
    let bracket = inp.l_g.powf(p)
        + (inp.l_g * inp.a_norm).powf(p) * mp * memory * tp
        + inp.l_b.powf(p) * mp * memory * tp
        + c_p(p) * inp.l_sigma.powf(p) * mp * (t.powf(e) / e).powf(p / 2.0);
    Ok(6f64.powf(p - 1.0) * bracket)
}

/// Largest δ ≤ ε with 6^{p−1} M^p T^{p(α−1)} δ + k_stab ε < ε, times 0.99.
pub fn delta_for_epsilon(inp: &CriterionInputs, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let k = k_stab(inp)?;
    if k >= 1.0 {
        return Err(Error::CriterionFails(k));
    }
    let p = inp.p();
    let denom = 6f64.powf(p - 1.0) * inp.m.powf(p) * inp.t_end.powf(p * (inp.alpha() - 1.0));
    Ok(DELTA_SAFETY * epsilon.min((1.0 - k) * epsilon / denom))
}

/// 4 M² (L_g²‖A‖² + L_b² + L_σ²) T^{2α−1}/(2α−1); mean square only.
pub fn caputo_ms_criterion(inp: &CriterionInputs) -> Result<f64> {
    inp.validate()?;
    if inp.order.p != 2 {
        return Err(Error::Domain(format!(
            "the Caputo criterion is stated for p = 2 only, got p = {}",
            inp.order.p
        )));
    }
    let e = 2.0 * inp.alpha() - 1.0;
    let f = inp.m * inp.m * inp.t_end.powf(e) / e;
    Ok(4.0 * ((inp.l_g * inp.a_norm).powi(2) * f + inp.l_b.powi(2) * f + inp.l_sigma.powi(2) * f))
}

/// Status of the integrability condition on b(·,0) and σ(·,0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrabilityAtZero {
    /// Vanishing coefficients make the condition hold trivially.
    ImpliedByVanishing,
    Unverified,
}

/// Every stability constant plus verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub inputs: CriterionInputs,
    pub theta: f64,
    pub c_p: f64,
    /// Θ/(1 − 4^{p−1}L_g^p); infinite when the neutral factor is ≥ 1.
    pub contraction: f64,
    pub neutral_factor: f64,
    pub k_stab: f64,
    pub k_stab_beta_form: f64,
    pub epsilon: f64,
    /// `None` when k_stab ≥ 1.
    pub delta: Option<f64>,
    /// `None` unless p = 2.
    pub caputo_ms: Option<f64>,
    pub sector: SectorVerdict,
    pub verdict_existence: bool,
    pub verdict_stability: bool,
    pub assumptions_verified: bool,
    pub integrability_at_zero: IntegrabilityAtZero,
    pub family: FamilyTag,
}

impl Certificate {
    /// theta < 1 and 4^{p−1}L_g^p < 1.
    pub fn existence_from_numbers(&self) -> bool {
        self.theta < 1.0 && self.neutral_factor < 1.0
    }

    pub fn stability_from_numbers(&self) -> bool {
        self.k_stab < 1.0 && self.sector.in_sector
    }

    /// Flat `key = value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let num = |v: f64| format!("{v:.16e}");
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), num);
        let _ = writeln!(s, "alpha = {}", num(self.inputs.order.alpha));
        let _ = writeln!(s, "p = {}", self.inputs.order.p);
        let _ = writeln!(s, "t_end = {}", num(self.inputs.t_end));
        let _ = writeln!(s, "l_g = {}", num(self.inputs.l_g));
        let _ = writeln!(s, "l_b = {}", num(self.inputs.l_b));
        let _ = writeln!(s, "l_sigma = {}", num(self.inputs.l_sigma));
        let _ = writeln!(s, "a_norm = {}", num(self.inputs.a_norm));
        let _ = writeln!(s, "m = {}", num(self.inputs.m));
        let _ = writeln!(s, "theta = {}", num(self.theta));
        let _ = writeln!(s, "c_p = {}", num(self.c_p));
        let _ = writeln!(s, "neutral_factor = {}", num(self.neutral_factor));
        let _ = writeln!(s, "contraction = {}", num(self.contraction));
        let _ = writeln!(s, "k_stab = {}", num(self.k_stab));
        let _ = writeln!(s, "k_stab_beta_form = {}", num(self.k_stab_beta_form));
        let _ = writeln!(s, "epsilon = {}", num(self.epsilon));
        let _ = writeln!(s, "delta = {}", opt(self.delta));
        let _ = writeln!(s, "caputo_ms = {}", opt(self.caputo_ms));
        let _ = writeln!(s, "sector_in = {}", self.sector.in_sector);
        let _ = writeln!(s, "sector_margin = {}", num(self.sector.margin));
        let _ = writeln!(
            s,
            "sector_offending = {}",
            self.sector
                .offending_eigenvalue
                .map_or_else(|| "none".to_string(), |z| format!("{:.16e} {:.16e}", z.re, z.im))
        );
        let _ = writeln!(s, "family = {}", self.family);
        let _ = writeln!(s, "assumptions_verified = {}", self.assumptions_verified);
        let integ = match self.integrability_at_zero {
            IntegrabilityAtZero::ImpliedByVanishing => "implied_by_vanishing",
            IntegrabilityAtZero::Unverified => "unverified",
        };
        let _ = writeln!(s, "integrability_at_zero = {integ}");
        let _ = writeln!(s, "verdict_existence = {}", self.verdict_existence);
        let _ = writeln!(s, "verdict_stability = {}", self.verdict_stability);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    pub epsilon: f64,
    /// Use this M instead of scanning ‖E_{α,α}(t^α A)‖.
    pub m_override: Option<f64>,
    pub n_nodes: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            epsilon: 1.0,
            m_override: None,
            n_nodes: 256,
        }
    }
}

/// Composes the sector check, the kernel-norm scan and all constants.
pub fn certify(system: &SystemSpec, t_end: f64, opts: &CertifyOptions) -> Result<Certificate> {
    system.validate().map_err(|e| e.in_field("system"))?;
    let order = system.order;
    let spectrum = eigenvalues(&system.a).map_err(|e| e.in_field("spectrum"))?;
    let sector = sector_check(&spectrum, order.alpha).map_err(|e| e.in_field("sector"))?;
    let m = match opts.m_override {
        Some(m) => m,
        None => ml_norm_sup(&system.a, order.alpha, t_end, opts.n_nodes).map_err(|e| e.in_field("m"))?,
    };
    // ‖A‖ enters multiplicatively; a zero matrix contributes nothing.
    let a_norm = system.a.norm_inf().max(f64::MIN_POSITIVE);
    let c = &system.coeffs;
    let inputs = CriterionInputs {
        order,
        t_end,
        l_g: c.l_g,
        l_b: c.l_b,
        l_sigma: c.l_sigma,
        a_norm,
        m,
    };
    let th = theta(&inputs).map_err(|e| e.in_field("theta"))?;
    let nf = inputs.neutral_factor();
    let contraction = match contraction_constant(&inputs) {
        Ok(v) => v,
        Err(Error::NeutralTooStrong(_)) => f64::INFINITY,
        Err(e) => return Err(e.in_field("contraction")),
    };
    let ks = k_stab(&inputs).map_err(|e| e.in_field("k_stab"))?;
    let ksb = k_stab_beta_form(&inputs).map_err(|e| e.in_field("k_stab"))?;
    let delta = match delta_for_epsilon(&inputs, opts.epsilon) {
        Ok(d) => Some(d),
        Err(Error::CriterionFails(_)) => None,
        Err(e) => return Err(e.in_field("delta")),
    };
    let caputo_ms = if order.p == 2 {
        Some(caputo_ms_criterion(&inputs).map_err(|e| e.in_field("caputo_ms"))?)
    } else {
        None
    };
    let integrability_at_zero = if c.assumptions_verified && c.family != FamilyTag::AdditiveNoise {
        IntegrabilityAtZero::ImpliedByVanishing
    } else {
        IntegrabilityAtZero::Unverified
    };
    let mut cert = Certificate {
        inputs,
        theta: th,
        c_p: c_p(order.p_f64()),
        contraction,
        neutral_factor: nf,
        k_stab: ks,
        k_stab_beta_form: ksb,
        epsilon: opts.epsilon,
        delta,
        caputo_ms,
        sector,
        verdict_existence: false,
        verdict_stability: false,
        assumptions_verified: c.assumptions_verified,
        integrability_at_zero,
        family: c.family,
    };
    cert.verdict_existence = cert.existence_from_numbers();
    cert.verdict_stability = cert.stability_from_numbers();
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::make_linear;
    use crate::fraccalc::gamma_fn;
    use crate::linalg::Matrix;
    use std::f64::consts::PI;

    fn bench(l: f64) -> CriterionInputs {
        CriterionInputs {
            order: FractionalOrder::new(0.75, 2).unwrap(),
            t_end: 1.0,
            l_g: l,
            l_b: l,
            l_sigma: l,
            a_norm: 1.0,
            m: 1.0,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn worked_numbers() {
        let inp = bench(0.05);
        assert!(rel(theta(&inp).unwrap(), 0.03 * PI) < 1e-13);
        assert!(rel(contraction_constant(&inp).unwrap(), 0.03 * PI / 0.99) < 1e-13);
        assert!(rel(k_stab(&inp).unwrap(), 0.105) < 1e-13);
        assert!(rel(delta_for_epsilon(&inp, 1.0).unwrap(), 0.99 * 0.895 / 6.0) < 1e-13);
        assert!(rel(caputo_ms_criterion(&inp).unwrap(), 0.06) < 1e-13);
    }

    #[test]
    fn zero_lipschitz_constants() {
        let inp = bench(0.0);
        assert_eq!(theta(&inp).unwrap(), 0.0);
        assert_eq!(contraction_constant(&inp).unwrap(), 0.0);
        assert_eq!(caputo_ms_criterion(&inp).unwrap(), 0.0);
        assert!(rel(delta_for_epsilon(&inp, 1.0).unwrap(), 0.99 / 6.0) < 1e-15);
        // Capped at ε for a tiny M.
        let small = CriterionInputs { m: 0.01, ..inp };
        assert_eq!(delta_for_epsilon(&small, 0.5).unwrap(), 0.99 * 0.5);
    }

    #[test]
    fn failure_modes() {
        let strong = CriterionInputs { l_g: 0.5, ..bench(0.0) };
        assert!(matches!(contraction_constant(&strong), Err(Error::NeutralTooStrong(_))));
        let noisy = CriterionInputs { l_sigma: 1.0, ..bench(0.0) };
        assert!(matches!(delta_for_epsilon(&noisy, 1.0), Err(Error::CriterionFails(_))));
        let p3 = CriterionInputs { order: FractionalOrder::new(0.75, 3).unwrap(), ..bench(0.05) };
        assert!(caputo_ms_criterion(&p3).is_err());
        assert!(theta(&CriterionInputs { m: 0.0, ..bench(0.05) }).is_err());
    }

    #[test]
    fn monotone_and_homogeneous() {
        let base = bench(0.05);
        let th = theta(&base).unwrap();
        let ks = k_stab(&base).unwrap();
        for bigger in [
            CriterionInputs { l_g: 0.06, ..base },
            CriterionInputs { l_b: 0.06, ..base },
            CriterionInputs { l_sigma: 0.06, ..base },
            CriterionInputs { m: 1.1, ..base },
            CriterionInputs { a_norm: 1.1, ..base },
            CriterionInputs { t_end: 2.0, ..base },
        ] {
            assert!(theta(&bigger).unwrap() >= th);
            assert!(k_stab(&bigger).unwrap() >= ks);
            assert!(contraction_constant(&bigger).unwrap() >= th / 0.99);
        }
        assert!(theta(&CriterionInputs { t_end: 2.0, ..base }).unwrap() > th);
        let c = 1.7;
        let scaled = CriterionInputs { l_g: 0.05 * c, l_b: 0.05 * c, l_sigma: 0.05 * c, ..base };
        assert!(rel(theta(&scaled).unwrap(), c * c * th) < 1e-13);
        assert!(rel(caputo_ms_criterion(&scaled).unwrap(), c * c * 0.06) < 1e-13);
    }

    #[test]
    fn p2_theta_matches_direct_expression() {
        for (a, t, m, lg, lb, ls, an) in [(0.75, 1.0, 1.0, 0.05, 0.05, 0.05, 1.0), (0.6, 2.5, 0.8, 0.1, 0.02, 0.3, 2.0), (0.9, 0.3, 1.4, 0.0, 0.2, 0.1, 0.5)] {
            let inp = CriterionInputs { order: FractionalOrder::new(a, 2).unwrap(), t_end: t, l_g: lg, l_b: lb, l_sigma: ls, a_norm: an, m };
            // p = 2: q = 2α − 1, C_2 = 1.
            let e = 2.0 * a - 1.0;
            let b = gamma_fn(e).unwrap().powi(2) / gamma_fn(2.0 * e).unwrap();
            let direct = 4.0 * m * m * b * t.powf(e) * (lg * lg * an * an + lb * lb + ls * ls);
            assert!(rel(theta(&inp).unwrap(), direct) < 1e-12);
        }
    }

    #[test]
    fn delta_never_exceeds_epsilon() {
        for eps in [1e-3, 0.5, 1.0, 10.0] {
            for m in [0.01, 0.5, 1.0, 2.0] {
                let inp = CriterionInputs { m, ..bench(0.01) };
                if let Ok(d) = delta_for_epsilon(&inp, eps) {
                    assert!(d <= eps);
                }
            }
        }
    }

    fn scalar(a: f64, l: f64) -> SystemSpec {
        let m = Matrix::scalar(l);
        SystemSpec::new(
            Matrix::scalar(a),
            vec![1.0],
            make_linear(m.clone(), m.clone(), m).unwrap(),
            FractionalOrder::new(0.75, 2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn certify_examples() {
        let c = certify(&scalar(-1.0, 0.05), 1.0, &CertifyOptions::default()).unwrap();
        assert!(c.verdict_existence && c.verdict_stability);
        assert!(rel(c.inputs.m, 1.0 / gamma_fn(0.75).unwrap()) < 1e-12);
        assert!(c.theta < 0.03 * PI);
        assert_eq!(c.integrability_at_zero, IntegrabilityAtZero::ImpliedByVanishing);
        let c = certify(&scalar(1.0, 0.0), 1.0, &CertifyOptions::default()).unwrap();
        assert!(!c.verdict_stability && !c.sector.in_sector);
        let c = certify(&scalar(-1.0, 0.6), 1.0, &CertifyOptions::default()).unwrap();
        assert!(!c.verdict_existence && c.contraction.is_infinite());
        let c = certify(&scalar(-1.0, 0.05), 1.0, &CertifyOptions { m_override: Some(1.0), ..Default::default() }).unwrap();
        assert!(rel(c.theta, 0.03 * PI) < 1e-13);
        assert!(c.report().contains("verdict_existence = true"));
    }
}
