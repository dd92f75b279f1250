//! `pergo` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pergo::stats::Level;

use crate::output::{sha256_hex, Manifest, Sink, Versions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// certificate checks, written to check.json
    Check,
    /// trajectories and grid chain as CSV
    Simulate,
    /// time-average trace and comparison with the analytic limit
    Ergodic,
    /// KS test of the grid chain against the invariant law
    InvariantTest,
    /// everything above plus an index
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Simulate => "simulate",
            Command::Ergodic => "ergodic",
            Command::InvariantTest => "invariant-test",
            Command::Report => "report",
        }
    }
}

/// Simulation and ergodicity checks for SDEs with periodic coefficients.
///
/// Exit status: 0 when every verdict passes, 2 when a verdict fails, 1 on errors.
#[derive(Debug, Parser)]
#[command(name = "pergo", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// run configuration (INI format)
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides [output] dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// overrides [plan] seed
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads; affects speed only
    #[arg(long, env = "PERGO_THREADS")]
    threads: Option<usize>,
    /// significance level of KS tests
    #[arg(long, default_value = "0.01", value_parser = parse_level)]
    level: Level,
}

fn parse_level(s: &str) -> Result<Level, String> {
    s.parse::<Level>().map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> Result<Option<bool>, String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err("--threads must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    let mut cfg = config::load_config(&cli.config).map_err(|e| format!("invalid configuration {}:\n{e}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        cfg.plan.seed = seed;
    }
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut sink = Sink::new(&dir, &cfg.formats).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let outcome = match cli.command {
        Command::Check => commands::check(&cfg, &mut sink),
        Command::Simulate => commands::simulate_cmd(&cfg, &mut sink),
        Command::Ergodic => commands::ergodic(&cfg, &mut sink),
        Command::InvariantTest => commands::invariant_test(&cfg, cli.level, &mut sink),
        Command::Report => commands::report(&cfg, cli.level, &mut sink),
    }
    .map_err(|e| e.to_string())?;
    let manifest = Manifest {
        command: cli.command.name().to_string(),
        config_sha256: sha256_hex(cfg.source.as_bytes()),
        seed: cfg.plan.seed,
        level: cli.level.value(),
        versions: Versions { pergo: pergo_version(), pergo_cli: env!("CARGO_PKG_VERSION") },
        verdict: match outcome {
            None => "none",
            Some(true) => "pass",
            Some(false) => "fail",
        }
        .to_string(),
        artifacts: std::mem::take(&mut sink.artifacts),
    };
    sink.manifest(&manifest).map_err(|e| format!("writing manifest: {e}"))?;
    Ok(outcome)
}

fn pergo_version() -> &'static str {
    // both crates share the workspace version
    env!("CARGO_PKG_VERSION")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the execution-error status; 2 is reserved for failed verdicts
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Some(false)) => {
            eprintln!("{}: a verdict failed", cli.command.name());
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
