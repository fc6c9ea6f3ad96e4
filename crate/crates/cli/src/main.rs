use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qrelay_cli::{execute, load_config, CliError, Command, Options, RunConfig};
use qrelay_core::scenarios::EvalMode;

/// Simulator for a two-source teleportation relay over fibre.
#[derive(Parser)]
#[command(name = "qrelay", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Monte Carlo trials per scan point.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Directory for CSV tables and the JSON summary.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Require the herald click in the coincidence.
    #[arg(long, global = true)]
    heralded: bool,
    /// Number of scan points.
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Fringe periods covered by the teleportation scan.
    #[arg(long, global = true, default_value_t = 2.0)]
    periods: f64,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Two-photon interference dip versus delay.
    Mandel,
    /// Teleportation fringe versus Bob's phase, with fit and fidelity.
    Teleport,
    /// Background budget from the source-blocking runs.
    Noise,
    /// Path-length drift with and without the delay controller.
    Stability,
    /// Feed-forward timing slack at Bob.
    ValidateTiming,
    /// Classical and cloning visibility and fidelity limits.
    Limits,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Analytic,
    Montecarlo,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let command = match cli.command {
        Cmd::Mandel => Command::Mandel,
        Cmd::Teleport => Command::Teleport,
        Cmd::Noise => Command::Noise,
        Cmd::Stability => Command::Stability,
        Cmd::ValidateTiming => Command::ValidateTiming,
        Cmd::Limits => Command::Limits,
    };
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let opts = Options {
        seed: cli.seed,
        mode: cli.mode.map(|m| match m {
            Mode::Analytic => EvalMode::Analytic,
            Mode::Montecarlo => EvalMode::MonteCarlo,
        }),
        trials: cli.trials,
        heralded: cli.heralded,
        points: cli.points,
        periods: cli.periods,
    };
    let report = execute(command, &cfg, &opts)?;
    if let Some(dir) = &cli.out {
        report.write(dir, command)?;
    }
    print!("{}", report.summary_text());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
