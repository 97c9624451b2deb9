use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gtflat::experiment::{cmd_run, cmd_verify_example1, cmd_weights};

#[derive(Parser)]
#[command(
    name = "gtflat",
    version,
    about = "Federated learning with game-theoretic aggregation weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run paired FedAvg / GTFLAT experiments described by a TOML config.
    Run { config: PathBuf },
    /// Check the three-client worked example end to end.
    #[command(name = "verify-example1")]
    VerifyExample1 {
        /// Componentwise tolerance on the final weights.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print adaptive weights for a file of flattened client updates.
    Weights { updates: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match Cli::parse().command {
        Command::Run { config } => cmd_run(&config),
        Command::VerifyExample1 { tol } => cmd_verify_example1(tol),
        Command::Weights { updates } => cmd_weights(&updates),
    };
    ExitCode::from(code as u8)
}
