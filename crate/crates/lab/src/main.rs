use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use reflect_lab::{execute, load_config, ExperimentConfig, LabError, Subcommand, EXIT_CONFIG};

/// Run penalized reflected SPDE experiments from a TOML configuration.
#[derive(Debug, Parser)]
#[command(name = "reflect-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// Configuration file; the standard scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the noise seed and the ensemble base seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<i32, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed_override {
        cfg = cfg.with_seed(seed);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Io(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let outcome = execute(cli.command, &cfg, &out)?;
    eprintln!(
        "{}: {} file(s) in {} (fingerprint {})",
        cli.command.name(),
        outcome.manifest.outputs.len(),
        out.display(),
        outcome.manifest.fingerprint
    );
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
