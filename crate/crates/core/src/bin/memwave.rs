use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use memwave::cli::{run, Experiment, ExperimentConfig, HarnessError};

/// Run one named experiment and print a one-line summary.
#[derive(Debug, Parser)]
#[command(name = "memwave", version)]
struct Args {
    /// One of: kernel-audit, free-oscillation, absorb, split-decay, regularity-ladder,
    /// quasistability, gronwall, covering-demo, attractor-radii.
    experiment: String,
    /// INI-style configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV and curve output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads() -> Result<Option<usize>, HarnessError> {
    match std::env::var("MEMWAVE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Usage(format!("MEMWAVE_THREADS: cannot parse '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn main_inner(args: Args) -> Result<bool, HarnessError> {
    let experiment: Experiment = args.experiment.parse()?;
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = threads()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Usage(e.to_string()))?;
    }
    let outcome = run(experiment, &cfg, args.out.as_deref())?;
    println!("{}", outcome.summary_line());
    for c in outcome.failed() {
        eprintln!("check {} failed: {}", c.name, c.detail);
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match main_inner(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("memwave: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
