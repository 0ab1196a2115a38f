//! Command-line front end for scenario files.
//!
//! Exit codes: 0 on success, 2 for anything wrong with the inputs (parse or
//! validation failures), 3 when a run breaks down numerically (truncation
//! leakage alarm, non-converged integration, ill-conditioned fits).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qprobe::scenario::{self, CliOverrides};

#[derive(Parser)]
#[command(
    name = "qprobe",
    about = "Two-level-probe readout of bosonic field moments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario: a TOML file path or a bundled name (see `list-bundled`).
    scenario: String,

    /// Override the scenario's rng seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the per-mode Fock truncation.
    #[arg(long)]
    truncation: Option<usize>,

    /// Output root; artifacts land in <OUT>/<scenario-name>/.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for parallel requests and tau points.
    #[arg(long)]
    jobs: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> CliOverrides {
        CliOverrides {
            seed: self.seed,
            truncation: self.truncation,
            out: self.out.clone(),
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write results.json plus per-run CSVs.
    Run(CommonArgs),
    /// Benchmark the four derivative estimators on a scenario's first
    /// observable.
    Compare(CommonArgs),
    /// Parse and validate a scenario without running it.
    Validate(CommonArgs),
    /// List the scenarios shipped inside the binary.
    ListBundled,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => scenario::run(&args.scenario, &args.overrides()).map(|out| {
            print!("{}", out.table);
            println!("wrote {}", out.dir.display());
            if out.report.leakage_alarm {
                // Artifacts are on disk for inspection, but the numbers
                // cannot be trusted; escalate like any numerical breakdown.
                eprintln!(
                    "error: truncation leakage alarm (see {})",
                    out.dir.join("results.json").display()
                );
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }),
        Command::Compare(args) => {
            scenario::compare(&args.scenario, &args.overrides()).map(|out| {
                print!("{}", out.table);
                println!("wrote {}", out.json_path.display());
                ExitCode::SUCCESS
            })
        }
        Command::Validate(args) => {
            scenario::validate(&args.scenario, &args.overrides()).map(|summary| {
                print!("{summary}");
                ExitCode::SUCCESS
            })
        }
        Command::ListBundled => {
            print!("{}", scenario::list_bundled());
            Ok(ExitCode::SUCCESS)
        }
    };
    outcome.unwrap_or_else(|err| {
        eprintln!("error: {err}");
        ExitCode::from(u8::try_from(scenario::exit_code(&err)).unwrap_or(2))
    })
}
