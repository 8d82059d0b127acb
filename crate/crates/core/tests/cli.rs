use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rlfsnde::cli::{cmd_check, cmd_convergence, cmd_simulate, RunConfig};
use rlfsnde::fraccalc::gamma_fn;
use rlfsnde::grid::TimeGrid;
use rlfsnde::simulator::{closed_form_homogeneous, Scheme};

const BENCH: &str = r#"{
    "system": {
        "a": [[-1.0]], "rho": [1.0], "alpha": 0.75, "p": 2,
        "coefficients": {"family": "linear", "g": [[0.05]], "b": [[0.05]], "sigma": [[0.05]]}
    },
    "grid": {"t": 1.0, "n": 64},
    "monte_carlo": {"n_paths": 40, "master_seed": 7},
    "criteria": {"m_override": 1.0}
}"#;

const ZERO: &str = r#"{
    "system": {"a": [[-1.0]], "rho": [1.0], "alpha": 0.75, "p": 2, "coefficients": {"family": "zero"}},
    "grid": {"t": 1.0, "n": 32},
    "monte_carlo": {"n_paths": 4, "master_seed": 1}
}"#;

fn run(args: &[&str], config: Option<(&Path, &str)>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rlfsnde"));
    cmd.args(args);
    if let Some((dir, text)) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(&path).arg("--out").arg(dir.join("out"));
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_benchmark_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["check"], Some((tmp.path(), BENCH)));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cert = fs::read_to_string(tmp.path().join("out/certificate.txt")).unwrap();
    let theta: f64 = cert
        .lines()
        .find_map(|l| l.strip_prefix("theta = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((theta - 0.03 * std::f64::consts::PI).abs() < 1e-12);
    assert!(cert.contains("verdict_existence = true"));
    assert!(cert.contains("sector_margin = "));
}

#[test]
fn check_neutral_term_too_strong() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BENCH.replace(r#""g": [[0.05]]"#, r#""g": [[0.6]]"#);
    let out = run(&["check"], Some((tmp.path(), &cfg)));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("neutral term too strong"), "{}", stderr(&out));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = BENCH
        .replace(r#""a": [[-1.0]]"#, r#""a": [[-1.0, 0.0], [0.0]]"#)
        .replace(r#""rho": [1.0]"#, r#""rho": [1.0, 0.0]"#);
    let out = run(&["check"], Some((tmp.path(), &cfg)));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("system.a[1]"), "{}", stderr(&out));

    let cfg = BENCH.replace(r#""alpha": 0.75"#, r#""alpha": 0.45"#);
    let out = run(&["simulate"], Some((tmp.path(), &cfg)));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("(1/2, 1]"));

    let out = run(&["check"], Some((tmp.path(), "{ not json")));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 1"));
}

#[test]
fn ml_prints_fifteen_digits() {
    let o = run(&["ml", "--alpha", "1", "--beta", "1", "--z", "1"], None);
    assert_eq!(stdout(&o).trim(), "2.71828182845905");
    let o = run(&["ml", "--alpha", "2", "--beta", "1", "--z", "1"], None);
    assert_eq!(stdout(&o).trim(), "1.54308063481524");
    let o = run(&["ml", "--alpha", "0.75", "--beta", "0.75", "--z", "0"], None);
    let want = format!("{:.15}", 1.0 / gamma_fn(0.75).unwrap());
    assert_eq!(stdout(&o).trim(), want);
    let o = run(&["ml", "--alpha", "-1", "--beta", "1", "--z", "1"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--seed", "99", "--scheme", "picard"], Some((tmp.path(), BENCH)));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let meta = fs::read_to_string(tmp.path().join("out/meta.txt")).unwrap();
    assert!(meta.contains("master_seed = 99"));
    assert!(meta.contains("scheme = picard"));
    assert!(meta.contains("config_sha256 = "));
    let verdict = fs::read_to_string(tmp.path().join("out/verdict.txt")).unwrap();
    assert!(verdict.contains("stable_p = true"));
    assert!(!tmp.path().join("out/paths.csv").exists());
}

#[test]
fn zero_coefficients_reproduce_closed_form_moments() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(ZERO).unwrap();
    cmd_simulate(&cfg, Some(tmp.path())).unwrap();
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let exact = closed_form_homogeneous(&cfg.system().unwrap().a, &[1.0], 0.75, grid).unwrap();
    let csv = fs::read_to_string(tmp.path().join("moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,m,ci_half_width"));
    let mut checked = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let t: f64 = cols[0].parse().unwrap();
        let m: f64 = cols[1].parse().unwrap();
        let j = (t * 32.0).round() as usize;
        let x = exact.value_at(j).unwrap()[0];
        assert!((m - x * x).abs() <= 1e-12 * (1.0 + x * x), "t={t}: {m} vs {}", x * x);
        checked += 1;
    }
    assert_eq!(checked, 32);
}

#[test]
fn schemes_agree_on_the_stable_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let base = BENCH.replace(r#""n": 64"#, r#""n": 256"#).replace(r#""n_paths": 40"#, r#""n_paths": 200"#);
    let mild = RunConfig::from_json(&base).unwrap();
    let mut integral = mild.clone();
    integral.monte_carlo.scheme = Scheme::IntegralForm;
    let a = cmd_simulate(&mild, Some(&tmp.path().join("m"))).unwrap();
    let b = cmd_simulate(&integral, Some(&tmp.path().join("i"))).unwrap();
    assert_eq!(a.verdict.stable_p, b.verdict.stable_p);
    assert_eq!(a.verdict.asymptotically_stable_p, b.verdict.asymptotically_stable_p);
    assert!((a.verdict.sup_moment - b.verdict.sup_moment).abs() < 0.05 * a.verdict.sup_moment);
}

#[test]
fn check_reports_unstable_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(&BENCH.replace(r#""a": [[-1.0]]"#, r#""a": [[1.0]]"#)).unwrap();
    let out = cmd_check(&cfg, Some(tmp.path())).unwrap();
    assert!(!out.certificate.verdict_stability);
    assert!(!out.certificate.sector.in_sector);
}

fn convergence_rows(text: &str) -> Vec<(usize, f64, String)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("N,weighted_sup_error,observed_order"));
    lines
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap(), c[2].to_string())
        })
        .collect()
}

#[test]
fn convergence_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(&BENCH.replace(r#""n_paths": 40"#, r#""n_paths": 200"#)).unwrap();
    let out = cmd_convergence(&cfg, Some(tmp.path())).unwrap();
    let rows = convergence_rows(&fs::read_to_string(&out.path).unwrap());
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![64, 128, 256]);
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
    assert!(rows[0].2.is_empty());
    let last: f64 = rows[2].2.parse().unwrap();
    assert!(last >= 0.2, "observed order {last}");

    let zero = RunConfig::from_json(ZERO).unwrap();
    let out = cmd_convergence(&zero, Some(tmp.path())).unwrap();
    let rows = convergence_rows(&fs::read_to_string(&out.path).unwrap());
    assert!(rows.iter().all(|r| r.1 < 1e-12));
    assert_eq!(rows[2].2, "saturated");
}
