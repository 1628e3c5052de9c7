use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hvsg_cli::{run, Experiment, Format, Overrides, RunConfig};

/// Runs hidden-variable Stern-Gerlach experiments and emits plot-ready tables.
#[derive(Parser)]
#[command(name = "hvsg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Exponential deviation law, separability and the sign process.
    Fluct,
    /// Outcome frequencies along a sweep of axes and sample sizes.
    Born,
    /// Trajectory ensemble, equivariance test and recorded paths.
    Traj,
    /// E(theta) sweep, CHSH, settings dependence and no-signaling.
    Bell,
    /// Grid propagation against the closed form, and Madelung residuals.
    Oracle,
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; without it the main table goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Exit with status 3 when a statistical check fails.
    #[arg(long, global = true)]
    check: bool,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let experiment = match cli.command {
        Command::Fluct => Experiment::Fluct,
        Command::Born => Experiment::Born,
        Command::Traj => Experiment::Traj,
        Command::Bell => Experiment::Bell,
        Command::Oracle => Experiment::Oracle,
    };
    let f = cli.flags;
    let base = match &f.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    };
    let overrides = Overrides {
        seed: f.seed,
        out: f.out,
        format: f.format,
        check: f.check,
        threads: f.threads,
    };
    let cfg = match base.and_then(|c| c.resolve(experiment, overrides)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    ExitCode::from(run(&cfg) as u8)
}
