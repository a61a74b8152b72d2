use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stokesed::config::Config;
use stokesed::{scenario, Error};

/// Sedimentation lab: run one named scenario from a TOML config and write
/// its report plus data files into the output directory.
#[derive(Parser)]
#[command(name = "stokesed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance a cloud and write snapshots plus running diagnostics
    Simulate(RunArgs),
    /// Evolve two nearby clouds and check the transport distance envelope
    Stability(RunArgs),
    /// Trajectory Taylor coefficients and the convergence-radius report
    Analyticity(RunArgs),
    /// Fixed-point transport iteration and its contraction horizon sweep
    Picard(RunArgs),
    /// Uniform-ball settling: traveling speed, shape drift, center velocity
    Hadamard(RunArgs),
    /// Plan and execute point-force steering into an absorbing target
    Control(RunArgs),
    /// Time direct summation against the treecode across cloud sizes
    Bench(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Override the cloud sampling seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Stability(a) => ("stability", a),
        Command::Analyticity(a) => ("analyticity", a),
        Command::Picard(a) => ("picard", a),
        Command::Hadamard(a) => ("hadamard", a),
        Command::Control(a) => ("control", a),
        Command::Bench(a) => ("bench", a),
    };

    let cfg = match Config::load(&args.config) {
        Ok(cfg) => cfg.with_seed(args.seed),
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(declared) = &cfg.scenario {
        if declared != name {
            eprintln!("config error: config declares scenario {declared:?}, command is {name:?}");
            return ExitCode::from(2);
        }
    }

    match scenario::run(name, &cfg, &args.out) {
        Ok(report) => {
            report.print();
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(Error::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
