//! Configuration ingestion and the four commands behind the binary.

mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use config::{CoefficientConfig, CriteriaConfig, GridConfig, MonteCarloConfig, OutputConfig, RunConfig, SystemConfig};

use crate::complex::C64;
use crate::criteria::{certify, Certificate, CertifyOptions};
use crate::error::{Error, Result};
use crate::fraccalc::{ml_scalar, MLEvalPolicy, MlEval};
use crate::moments::{pth_moment_curve, stability_verdict, DatumCurves, DecayVerdict, StabilityOptions};
use crate::simulator::{self_convergence, simulate, BrownianEnsemble, ConvergenceRow};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CRITERION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Errors below this are at the evaluation floor and carry no order.
pub const SATURATION_FLOOR: f64 = 1e-12;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Field { source, .. } => exit_code(source),
        Error::NeutralTooStrong(_) | Error::CriterionFails(_) => EXIT_CRITERION,
        Error::NoConvergence(_) | Error::Singular | Error::Divergence(_) | Error::PathFailure { .. } => EXIT_NUMERIC,
        Error::Config { .. } | Error::Shape(_) | Error::Domain(_) | Error::Pole(_) | Error::Io(_) => EXIT_CONFIG,
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map_or_else(|| PathBuf::from(&cfg.output.directory), Path::to_path_buf);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn certify_config(cfg: &RunConfig) -> Result<Certificate> {
    let sys = cfg.system()?;
    let c = &cfg.criteria;
    certify(
        &sys,
        cfg.grid.t,
        &CertifyOptions {
            epsilon: c.epsilon,
            m_override: c.m_override,
            n_nodes: c.n_nodes,
        },
    )
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub certificate: Certificate,
    pub path: PathBuf,
}

impl CheckOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.certificate.verdict_existence {
            0
        } else {
            EXIT_CRITERION
        }
    }
}

/// Writes `certificate.txt`.
pub fn cmd_check(cfg: &RunConfig, out: Option<&Path>) -> Result<CheckOutcome> {
    cfg.validate()?;
    let certificate = certify_config(cfg)?;
    let path = out_dir(cfg, out)?.join("certificate.txt");
    fs::write(&path, certificate.report())?;
    Ok(CheckOutcome { certificate, path })
}

#[derive(Clone, Debug)]
pub struct SimulateOutcome {
    pub verdict: DecayVerdict,
    pub certificate: Certificate,
    /// Whether ‖ρ‖ ≤ δ held, i.e. the stability definition applies.
    pub premise_met: bool,
    pub files: Vec<PathBuf>,
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Simulates the ensemble and writes moment curves, verdict and provenance.
pub fn cmd_simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<SimulateOutcome> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let grid = cfg.time_grid()?;
    let mc = &cfg.monte_carlo;
    let dir = out_dir(cfg, out)?;
    let certificate = certify_config(cfg)?;

    let ens = BrownianEnsemble::generate(grid, mc.n_paths, mc.master_seed)?;
    let paths = simulate(&sys, &ens, mc.scheme, mc.as_printed)?;
    let p = sys.order.p;
    let unweighted = pth_moment_curve(&paths, p, false)?;
    let weighted = pth_moment_curve(&paths, p, true)?;

    let rho_norm = euclid(&sys.rho);
    let premise_met = certificate.delta.is_some_and(|d| rho_norm <= d * (1.0 + 1e-12));
    let c = &cfg.criteria;
    let verdict = stability_verdict(
        &[DatumCurves {
            rho_norm,
            weighted: weighted.clone(),
            unweighted: unweighted.clone(),
        }],
        &StabilityOptions {
            epsilon: c.epsilon,
            // Without an admissible δ the surrogate is still evaluated on the
            // given datum; `premise_met` records that the definition is void.
            delta: certificate.delta.filter(|_| premise_met).unwrap_or(rho_norm.max(f64::MIN_POSITIVE)),
            tail_tol: c.tail_tol,
            window_fraction: c.window_fraction,
        },
    )?;

    let mut files = Vec::new();
    let moments = dir.join("moments.csv");
    unweighted.write_csv(BufWriter::new(File::create(&moments)?))?;
    files.push(moments);
    let moments_w = dir.join("moments_weighted.csv");
    weighted.write_csv(BufWriter::new(File::create(&moments_w)?))?;
    files.push(moments_w);

    let mut text = verdict.report();
    let _ = writeln!(text, "p = {p}");
    let _ = writeln!(text, "epsilon = {:.16e}", c.epsilon);
    let _ = writeln!(text, "rho_norm = {rho_norm:.16e}");
    let _ = writeln!(
        text,
        "delta = {}",
        certificate.delta.map_or_else(|| "none".into(), |d| format!("{d:.16e}"))
    );
    let _ = writeln!(text, "premise_rho_within_delta = {premise_met}");
    let _ = writeln!(text, "certificate_verdict_stability = {}", certificate.verdict_stability);
    let verdict_path = dir.join("verdict.txt");
    fs::write(&verdict_path, text)?;
    files.push(verdict_path);

    if cfg.output.emit_paths {
        let pp = dir.join("paths.csv");
        paths.write_csv(BufWriter::new(File::create(&pp)?))?;
        files.push(pp);
    }

    let json = cfg.to_json();
    let digest = sha256_hex(json.as_bytes());
    let mut meta = paths.metadata(&digest);
    let _ = writeln!(meta, "config_sha256 = {digest}");
    let _ = writeln!(meta, "alpha = {:.16e}", sys.order.alpha);
    let _ = writeln!(meta, "p = {p}");
    let _ = writeln!(meta, "rng = chacha8 splitmix-derived per-path streams");
    let _ = writeln!(meta, "version = {}", env!("CARGO_PKG_VERSION"));
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta)?;
    files.push(meta_path);

    Ok(SimulateOutcome {
        verdict,
        certificate,
        premise_met,
        files,
    })
}

/// Formats `v` with `sig` significant digits, positional unless the
/// exponent is extreme.
pub fn format_significant(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // Rounding may carry into the next decade.
    let rounded: f64 = format!("{:.*e}", sig - 1, v).parse().unwrap_or(v);
    let exp = exp.max(rounded.abs().log10().floor() as i32);
    if (-5..sig as i32).contains(&exp) {
        format!("{:.*}", (sig as i32 - 1 - exp).max(0) as usize, v)
    } else {
        format!("{:.*e}", sig - 1, v)
    }
}

/// E_{α,β}(z) as printed by the binary: the real part alone for real
/// arguments, otherwise `re im`.
pub fn cmd_ml(alpha: f64, beta: f64, z: C64) -> Result<(String, MlEval<C64>)> {
    let eval = ml_scalar(alpha, beta, z, &MLEvalPolicy::default())?;
    let v = eval.value;
    let text = if z.im == 0.0 {
        format_significant(v.re, 15)
    } else {
        format!("{} {}", format_significant(v.re, 15), format_significant(v.im, 15))
    };
    Ok((text, eval))
}

#[derive(Clone, Debug)]
pub struct ConvergenceOutcome {
    pub rows: Vec<ConvergenceRow>,
    pub path: PathBuf,
}

fn order_cell(prev: Option<&ConvergenceRow>, row: &ConvergenceRow) -> String {
    match (prev, row.order) {
        (None, _) | (_, None) => String::new(),
        (Some(p), Some(o)) => {
            if p.error < SATURATION_FLOOR || row.error < SATURATION_FLOOR {
                "saturated".into()
            } else {
                format!("{o:.16e}")
            }
        }
    }
}

/// Self-convergence table against a 16N reference.
pub fn cmd_convergence(cfg: &RunConfig, out: Option<&Path>) -> Result<ConvergenceOutcome> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let grid = cfg.time_grid()?;
    let mc = &cfg.monte_carlo;
    let rows = self_convergence(&sys, grid, mc.n_paths, mc.master_seed, mc.scheme, mc.as_printed)?;
    let mut text = String::from("N,weighted_sup_error,observed_order\n");
    for (i, r) in rows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|k| &rows[k]);
        let _ = writeln!(text, "{},{:.16e},{}", r.n_steps, r.error, order_cell(prev, r));
    }
    let path = out_dir(cfg, out)?.join("convergence.csv");
    fs::write(&path, text)?;
    Ok(ConvergenceOutcome { rows, path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(std::f64::consts::E, 15), "2.71828182845905");
        assert_eq!(format_significant(1.0f64.cosh(), 15), "1.54308063481524");
        assert_eq!(format_significant(-0.001234, 3), "-0.00123");
        assert_eq!(format_significant(9.9999999, 3), "10.0");
        assert_eq!(format_significant(1.5e20, 3), "1.50e20");
    }

    #[test]
    fn digest_is_standard() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::NeutralTooStrong(1.4).in_field("c")), EXIT_CRITERION);
        assert_eq!(
            exit_code(&Error::PathFailure {
                path: 3,
                reason: "nan".into()
            }),
            EXIT_NUMERIC
        );
    }
}
