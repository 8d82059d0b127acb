use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{make_bounded_smooth, make_linear, CoefficientSet};
use crate::error::{Error, Result};
use crate::fraccalc::FractionalOrder;
use crate::grid::TimeGrid;
use crate::linalg::Matrix;
use crate::simulator::{Scheme, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub criteria: CriteriaConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Row-major drift matrix.
    pub a: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub alpha: f64,
    pub p: u32,
    pub coefficients: CoefficientConfig,
    /// Admits coefficient families that do not vanish at x = 0.
    #[serde(default)]
    pub allow_nonvanishing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    Zero,
    Linear {
        g: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
    },
    BoundedSmooth {
        c_g: f64,
        c_b: f64,
        c_s: f64,
    },
    AdditiveNoise {
        sigma: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Memory term A g(τ, X) in the integral form instead of A X.
    #[serde(default)]
    pub as_printed: bool,
}

fn default_scheme() -> Scheme {
    Scheme::Mild
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriteriaConfig {
    pub epsilon: f64,
    pub window_fraction: f64,
    pub tail_tol: f64,
    pub m_override: Option<f64>,
    pub n_nodes: usize,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        CriteriaConfig {
            epsilon: 1.0,
            window_fraction: 0.1,
            tail_tol: 1e-3,
            m_override: None,
            n_nodes: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    pub emit_paths: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            emit_paths: false,
        }
    }
}

fn matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix> {
    if rows.len() != n {
        return Err(Error::config(field, format!("has {} rows, expected {n}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::config(
                format!("{field}[{i}]"),
                format!("row has {} entries, expected {n}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("{field}[{i}][{j}]"), "not finite"));
        }
    }
    Matrix::from_rows(rows)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every module precondition reachable from the configuration.
    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.time_grid()?;
        if self.monte_carlo.n_paths == 0 {
            return Err(Error::config("monte_carlo.n_paths", "must be at least 1"));
        }
        let c = &self.criteria;
        if !(c.epsilon > 0.0) || !c.epsilon.is_finite() {
            return Err(Error::config("criteria.epsilon", "must be positive"));
        }
        if !(c.window_fraction > 0.0 && c.window_fraction < 1.0) {
            return Err(Error::config("criteria.window_fraction", "must lie in (0, 1)"));
        }
        if !(c.tail_tol > 0.0) {
            return Err(Error::config("criteria.tail_tol", "must be positive"));
        }
        if let Some(m) = c.m_override {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::config("criteria.m_override", "must be positive"));
            }
        }
        if c.n_nodes < 16 {
            return Err(Error::config("criteria.n_nodes", "must be at least 16"));
        }
        if self.output.directory.is_empty() {
            return Err(Error::config("output.directory", "must not be empty"));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t, self.grid.n).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn system(&self) -> Result<SystemSpec> {
        let s = &self.system;
        if !(s.alpha > 0.5 && s.alpha <= 1.0) {
            return Err(Error::config(
                "system.alpha",
                format!("{} is outside the admissible interval (1/2, 1]", s.alpha),
            ));
        }
        let order = FractionalOrder::new(s.alpha, s.p).map_err(|e| Error::config("system.p", e.to_string()))?;
        let n = s.a.len();
        if n == 0 {
            return Err(Error::config("system.a", "must be non-empty"));
        }
        let a = matrix("system.a", &s.a, n)?;
        if s.rho.len() != n {
            return Err(Error::config(
                "system.rho",
                format!("has length {}, expected {n}", s.rho.len()),
            ));
        }
        if !s.rho.iter().all(|v| v.is_finite()) {
            return Err(Error::config("system.rho", "not finite"));
        }
        let field = "system.coefficients";
        let coeffs = match &s.coefficients {
            CoefficientConfig::Zero => CoefficientSet::zero(),
            CoefficientConfig::Linear { g, b, sigma } => make_linear(
                matrix(&format!("{field}.g"), g, n)?,
                matrix(&format!("{field}.b"), b, n)?,
                matrix(&format!("{field}.sigma"), sigma, n)?,
            )
            .map_err(|e| Error::config(field, e.to_string()))?,
            CoefficientConfig::BoundedSmooth { c_g, c_b, c_s } => {
                make_bounded_smooth(*c_g, *c_b, *c_s).map_err(|e| Error::config(field, e.to_string()))?
            }
            CoefficientConfig::AdditiveNoise { sigma } => {
                if sigma.len() != n {
                    return Err(Error::config(
                        format!("{field}.sigma"),
                        format!("has length {}, expected {n}", sigma.len()),
                    ));
                }
                CoefficientSet::additive_noise(sigma.clone(), s.allow_nonvanishing)
                    .map_err(|e| Error::config(field, e.to_string()))?
            }
        };
        SystemSpec::new(a, s.rho.clone(), coeffs, order).map_err(|e| Error::config("system", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BENCH: &str = r#"{
        "system": {
            "a": [[-1.0]], "rho": [1.0], "alpha": 0.75, "p": 2,
            "coefficients": {"family": "linear", "g": [[0.05]], "b": [[0.05]], "sigma": [[0.05]]}
        },
        "grid": {"t": 1.0, "n": 64},
        "monte_carlo": {"n_paths": 8, "master_seed": 7}
    }"#;

    #[test]
    fn parses_with_defaults_and_round_trips() {
        let cfg = RunConfig::from_json(BENCH).unwrap();
        assert_eq!(cfg.monte_carlo.scheme, Scheme::Mild);
        assert_eq!(cfg.criteria, CriteriaConfig::default());
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.system().unwrap().coeffs.l_g, 0.05);
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn field_level_diagnostics() {
        let bad = BENCH.replace(r#""a": [[-1.0]]"#, r#""a": [[-1.0, 0.0], [1.0]]"#).replace(r#""rho": [1.0]"#, r#""rho": [1.0, 1.0]"#);
        assert_eq!(field_of(RunConfig::from_json(&bad).unwrap_err()), "system.a[1]");
        let bad = BENCH.replace("0.75", "0.4");
        assert_eq!(field_of(RunConfig::from_json(&bad).unwrap_err()), "system.alpha");
        let bad = BENCH.replace(r#""n": 64"#, r#""n": 1"#);
        assert_eq!(field_of(RunConfig::from_json(&bad).unwrap_err()), "grid");
        let bad = BENCH.replace(r#""master_seed": 7"#, r#""master_seed": 7, "bogus": 1"#);
        assert!(field_of(RunConfig::from_json(&bad).unwrap_err()).starts_with("line"));
    }

    #[test]
    fn additive_noise_needs_flag() {
        let noisy = BENCH.replace(
            r#"{"family": "linear", "g": [[0.05]], "b": [[0.05]], "sigma": [[0.05]]}"#,
            r#"{"family": "additive_noise", "sigma": [0.3]}"#,
        );
        assert_eq!(field_of(RunConfig::from_json(&noisy).unwrap_err()), "system.coefficients");
        let ok = noisy.replace(r#""p": 2,"#, r#""p": 2, "allow_nonvanishing": true,"#);
        assert!(RunConfig::from_json(&ok).is_ok());
    }
}
