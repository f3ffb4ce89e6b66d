use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use delayadm::cli::{run, validate_file, Outcome, RunOptions};
use delayadm::config::Experiment;

#[derive(Parser)]
#[command(name = "delayadm", version, about = "Semigroup bounds and admissibility checks for linear delay systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiply m by k and divide dt by k.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    refine: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the delay equation from a lifted initial state.
    Simulate(Common),
    /// Check the semigroup growth bounds.
    Bounds(Common),
    /// Estimate the Weiss admissibility constant of B.
    Admissibility {
        #[command(flatten)]
        common: Common,
        /// Reference growth rate for the sweep.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<f64>,
    },
    /// Check the discrete adjoint pairing and eigenvalues.
    AdjointCheck(Common),
    /// Run the age-structured population example.
    PopulationDemo(Common),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Experiment to validate for; defaults to `experiment` in the config.
        #[arg(long)]
        experiment: Option<Experiment>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        refine: u64,
    },
}

fn options(experiment: Experiment, c: Common, omega: Option<f64>) -> RunOptions {
    RunOptions { experiment, config: c.config, out: c.out, seed: c.seed, refine: c.refine as usize, omega }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = match cli.command {
        Command::Validate { config, experiment, refine } => {
            let diags = validate_file(&config, experiment, refine as usize);
            if diags.is_empty() {
                println!("ok");
                return ExitCode::SUCCESS;
            }
            for d in &diags {
                eprintln!("{d}");
            }
            return ExitCode::from(1);
        }
        Command::Simulate(c) => options(Experiment::Simulate, c, None),
        Command::Bounds(c) => options(Experiment::Bounds, c, None),
        Command::Admissibility { common, omega } => options(Experiment::Admissibility, common, omega),
        Command::AdjointCheck(c) => options(Experiment::AdjointCheck, c, None),
        Command::PopulationDemo(c) => options(Experiment::PopulationDemo, c, None),
    };
    let manifest = run(&opts);
    for c in &manifest.checks {
        let tag = match (c.passed, c.advisory) {
            (true, _) => "pass",
            (false, true) => "advisory",
            (false, false) => "FAIL",
        };
        println!("{tag:>8}  {}: {}", c.name, c.detail);
    }
    if let Some(e) = &manifest.error {
        eprintln!("error: {e}");
    }
    println!(
        "{}",
        match manifest.outcome {
            Outcome::Passed => "passed",
            Outcome::Failed => "failed",
            Outcome::Error => "error",
        }
    );
    ExitCode::from(manifest.outcome.exit_code() as u8)
}
