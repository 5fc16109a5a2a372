use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use l0opt_cli::{oracle, run_experiment, verify, Overrides};

#[derive(Parser)]
#[command(
    name = "l0opt",
    about = "Support-budgeted sparse minimization experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write outputs here instead of the config's output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Cap the iteration count, overriding the config.
    #[arg(long, global = true)]
    max_iter: Option<usize>,

    /// Suppress progress output on stdout/stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Solve { config: PathBuf },
    /// Check a stored solution against the optimality conditions.
    Verify { solution: PathBuf, config: PathBuf },
    /// Compare the threshold solver with brute-force enumeration.
    Oracle { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        output_dir: cli.output_dir,
        max_iter: cli.max_iter,
        quiet: cli.quiet,
    };
    let code = match cli.command {
        Command::Solve { config } => run_experiment(&config, &overrides),
        Command::Verify { solution, config } => verify(&solution, &config, &overrides),
        Command::Oracle { config } => oracle(&config, &overrides),
    };
    ExitCode::from(code as u8)
}
