use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use lsv_stability::experiment::{self, ExperimentConfig};
use lsv_stability::Error;

#[derive(Parser)]
#[command(version, about = "Invariant densities, decay of correlations and Hölder stability for intermittent maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for sampled probes; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Invariant density with cone and norm certificates.
    Density,
    /// Decay of ‖Lⁿg‖₁ for zero-average probes.
    Equilibrium,
    /// Distance of perturbed invariant densities against the Hölder bound.
    Stability,
    /// Constants A*, K_T, c_T, a_T, b_T and M.
    Constants,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn print<T: Serialize>(value: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    let out = cfg.out.clone();
    if let Some(dir) = &out {
        experiment::write_config(&cfg, dir)?;
    }
    let passed = match cli.command {
        Command::Density => {
            let r = experiment::run_density(&cfg)?;
            if let Some(dir) = &out {
                r.write(dir)?;
            }
            print(&r)?;
            r.passed
        }
        Command::Equilibrium => {
            let r = experiment::run_equilibrium(&cfg)?;
            if let Some(dir) = &out {
                r.write(dir)?;
            }
            print(&r)?;
            r.passed
        }
        Command::Stability => {
            let r = experiment::run_stability(&cfg)?;
            if let Some(dir) = &out {
                r.write(dir)?;
            }
            print(&r)?;
            r.passed
        }
        Command::Constants => {
            let r = experiment::run_constants(&cfg)?;
            if let Some(dir) = &out {
                experiment::write_constants(&r, dir)?;
            }
            print(&r)?;
            r.contraction_factor < 1.0
        }
    };
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("assertion failed; see the report above");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
