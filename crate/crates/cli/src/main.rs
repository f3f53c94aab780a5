use std::path::PathBuf;
use std::process::ExitCode;

use achopf_cli::{commands, CliError, Command, ConfigError, Run, RunConfig};
use clap::Parser;

/// Verification runs for the artificial-compressibility Hopf problem.
#[derive(Debug, Parser)]
#[command(name = "achopf", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override `grid.eps`, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Override `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn threads() -> Result<Option<usize>, ConfigError> {
    match std::env::var("ACHOPF_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::Invalid {
                key: "ACHOPF_THREADS",
                reason: format!("expected a positive integer, got {v:?}"),
            }),
        },
    }
}

fn execute(args: Args) -> Result<bool, CliError> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(eps) = args.eps {
        cfg.grid.eps = eps;
    }
    if let Some(out) = args.out {
        cfg.run.output_dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = threads()? {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError::Invalid {
                key: "ACHOPF_THREADS",
                reason: e.to_string(),
            })?;
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    let run = Run::new(cfg)?;
    let bundle = commands::run(args.command, &run)?;
    bundle.write(&run.cfg.run.output_dir)?;
    for w in &bundle.body.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", bundle.summary());
    Ok(bundle.passed())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
