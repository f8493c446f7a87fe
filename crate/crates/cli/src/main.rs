use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernel_mor::{CliError, Options, Pipeline, Stage};

#[derive(Parser)]
#[command(name = "kernel-mor", version, about = "Kernel balanced model reduction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `out_dir` in the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run even if the artifacts are up to date.
    #[arg(long)]
    force: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Training and evaluation trajectories of the full system.
    Simulate(Common),
    /// Impulse and initial-state sample sets.
    Gramians {
        #[command(flatten)]
        common: Common,
        /// Use this dataset CSV instead of simulating.
        #[arg(long)]
        import: Option<PathBuf>,
        /// Also write the dataset CSV here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Kernel balancing and truncation; prints the Hankel values.
    Balance(Common),
    /// Regularized least-squares models of the reduced dynamics and output map.
    Learn(Common),
    /// Assemble the closed reduced system.
    Reduce(Common),
    /// Simulate the reduced system against the full one.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSON with replacement evaluation signals (a list, or {"signals": [...]}).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Every stage in order, reusing up-to-date artifacts.
    Run(Common),
}

fn open(c: &Common) -> Result<Pipeline, CliError> {
    Pipeline::open(
        &c.config,
        Options {
            out: c.out.clone(),
            seed: c.seed,
            force: c.force,
            quiet: c.quiet,
        },
    )
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(c) => open(&c)?.run_stage(Stage::Simulate).map(drop),
        Command::Gramians { common, import, export } => {
            let mut p = open(&common)?;
            match import {
                Some(src) => p.import_dataset(&src)?,
                None => drop(p.run_stage(Stage::Gramians)?),
            }
            if let Some(dst) = export {
                p.export_dataset(&dst)?;
            }
            Ok(())
        }
        Command::Balance(c) => {
            let mut p = open(&c)?;
            p.run_stage(Stage::Balance)?;
            print!("{}", p.sigma_table()?);
            Ok(())
        }
        Command::Learn(c) => open(&c)?.run_stage(Stage::Learn).map(drop),
        Command::Reduce(c) => open(&c)?.run_stage(Stage::Reduce).map(drop),
        Command::Evaluate { common, input } => {
            let mut p = open(&common)?;
            match input {
                Some(path) => p.evaluate_custom(&path).map(drop),
                None => p.run_stage(Stage::Evaluate).map(drop),
            }
        }
        Command::Run(c) => {
            let mut p = open(&c)?;
            for stage in Stage::ALL {
                p.run_stage(stage)
                    .inspect_err(|_| eprintln!("stage `{}` failed", stage.name()))?;
                if stage == Stage::Balance && !c.quiet {
                    print!("{}", p.sigma_table()?);
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
