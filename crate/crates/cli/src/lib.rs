//! Command-line front end for the `mfvi-core` solvers: reads a JSON run
//! config, dispatches one subcommand and writes CSV/JSON artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{dispatch, Command, Outcome};
pub use config::{load_config, parse_config, RunConfig};
pub use error::CliError;

const CONFIG_HELP: &str = "\
Config defaults: grid x_min=-8, x_max=8, M=512 shared by all coordinates; \
init N(0,1) per coordinate; all solvers enabled; cavi tol=1e-8, max_sweeps=500; \
jko h=0.05, horizon=20; fp dt=1e-3 implicit, horizon=20; \
sde n_particles=20000, dt=1e-3, burn_in=5, horizon=10; \
study_h hs=[0.2,0.1,0.05,0.025], times=[1]; seed=0; output dir=out.";

#[derive(Debug, Parser)]
#[command(name = "mfvi", version, about = "Mean-field variational inference solvers", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress the per-solver summary lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Coordinate ascent to its fixed point.
    RunCavi(RunArgs),
    /// Coordinate-wise minimizing movements up to the jko horizon.
    RunJko(RunArgs),
    /// Coupled Fokker-Planck system up to the fp horizon.
    RunFp(RunArgs),
    /// McKean-Vlasov particles up to the sde horizon.
    RunSde(RunArgs),
    /// All four solvers and their pairwise marginal distances.
    Compare(RunArgs),
    /// Step-size refinement table for the minimizing-movement scheme.
    StudyH(RunArgs),
    /// Energy ledger of a minimizing-movement run.
    Dissipation(RunArgs),
    /// Evaluate a closed-form or brute-force oracle and print JSON.
    Oracle {
        /// ou-moments | gaussian-jko-step | discrete-ot | gaussian-cavi
        name: String,
        #[arg(allow_negative_numbers = true)]
        args: Vec<f64>,
    },
}

fn run_args(sub: Sub) -> Result<(Command, RunArgs), Sub> {
    Ok(match sub {
        Sub::RunCavi(a) => (Command::RunCavi, a),
        Sub::RunJko(a) => (Command::RunJko, a),
        Sub::RunFp(a) => (Command::RunFp, a),
        Sub::RunSde(a) => (Command::RunSde, a),
        Sub::Compare(a) => (Command::Compare, a),
        Sub::StudyH(a) => (Command::StudyH, a),
        Sub::Dissipation(a) => (Command::Dissipation, a),
        other => return Err(other),
    })
}

/// Loads the config and applies command-line overrides.
pub fn resolve(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Summaries go to stdout, diagnostics to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_args(cli.command) {
        Ok((command, args)) => {
            let result = resolve(&args).and_then(|cfg| dispatch(&cfg, command));
            match result {
                Ok(outcome) => {
                    if !args.quiet {
                        for line in &outcome.summary {
                            println!("{line}");
                        }
                    }
                    outcome.exit_code
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Err(Sub::Oracle { name, args }) => match mfvi_core::oracle::run_named(&name, &args) {
            Ok(r) => match serde_json::to_string_pretty(&r) {
                Ok(s) => {
                    println!("{s}");
                    error::EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    error::EXIT_SOLVER
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                error::EXIT_CONFIG
            }
        },
        Err(_) => unreachable!("every run subcommand is mapped above"),
    }
}
