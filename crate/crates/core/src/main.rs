use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rlfsnde::cli::{cmd_check, cmd_convergence, cmd_ml, cmd_simulate, exit_code, RunConfig, EXIT_CONFIG};
use rlfsnde::complex::C64;
use rlfsnde::simulator::Scheme;
use rlfsnde::{Error, Result};

#[derive(Parser)]
#[command(name = "rlfsnde", version, about = "Fractional stochastic neutral systems: certificates and Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the existence and stability criteria.
    Check(RunArgs),
    /// Simulate the ensemble and write moment curves.
    Simulate(RunArgs),
    /// Print E_{alpha,beta}(z).
    Ml {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        z_im: f64,
    },
    /// Self-convergence study against a 16N reference.
    Convergence(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides monte_carlo.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Use A g(t, X) as the memory term of the integral form.
    #[arg(long)]
    as_printed: bool,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeArg {
    Mild,
    IntegralForm,
    Picard,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Mild => Scheme::Mild,
            SchemeArg::IntegralForm => Scheme::IntegralForm,
            SchemeArg::Picard => Scheme::Picard,
        }
    }
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.monte_carlo.master_seed = seed;
        }
        if let Some(s) = self.scheme {
            cfg.monte_carlo.scheme = s.into();
        }
        if self.as_printed {
            cfg.monte_carlo.as_printed = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check(args) => {
            let cfg = args.load()?;
            let out = cmd_check(&cfg, args.out.as_deref())?;
            print!("{}", out.certificate.report());
            if out.certificate.neutral_factor >= 1.0 {
                eprintln!("{}", Error::NeutralTooStrong(out.certificate.neutral_factor));
            } else if !out.certificate.verdict_existence {
                eprintln!("existence criterion fails: theta = {}", out.certificate.theta);
            }
            Ok(out.exit_code())
        }
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let out = cmd_simulate(&cfg, args.out.as_deref())?;
            print!("{}", out.verdict.report());
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Ml { alpha, beta, z, z_im } => {
            let (text, eval) = cmd_ml(alpha, beta, C64::new(z, z_im))?;
            if let Some(w) = eval.warning {
                eprintln!("warning: {w:?}");
            }
            println!("{text}");
            Ok(0)
        }
        Command::Convergence(args) => {
            let cfg = args.load()?;
            let out = cmd_convergence(&cfg, args.out.as_deref())?;
            print!("{}", std::fs::read_to_string(&out.path)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; help and version are not.
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
