use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subergo::cli::{cmd_full_pipeline, cmd_validate_rate, CmdOutcome, RunOptions};
use subergo::scenario::Scenario;

/// Subgeometric-ergodicity verification toolkit.
#[derive(Parser)]
#[command(name = "subergo", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate the scenario's rate function: standing assumptions,
    /// submultiplicativity and scaling lemmas, round trip, derivative identity.
    ValidateRate(CommonArgs),
    /// Run the full pipeline: drift certificate, both psi constructions,
    /// Condition-1 estimators, quantitative bounds, convergence curve.
    Pipeline(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo path count override.
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads (default: all cores). Estimates are identical for
    /// any value.
    #[arg(long)]
    jobs: Option<usize>,
}

impl CommonArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out.clone(),
            seed: self.seed,
            paths: self.paths,
            jobs: self.jobs,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (
        &CommonArgs,
        fn(&Scenario, &RunOptions) -> subergo::Result<CmdOutcome>,
    ) = match &cli.cmd {
        Cmd::ValidateRate(a) => (a, cmd_validate_rate),
        Cmd::Pipeline(a) => (a, cmd_full_pipeline),
    };
    let scenario = match Scenario::from_file(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&scenario, &args.options()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
