//! `blockmf`: run simulations, mean-field solvers and experiments from a scenario file.

mod commands;
mod scenario;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenario::{Overrides, Scenario};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            CliError::Validation(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<blockmf::Error> for CliError {
    fn from(e: blockmf::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blockmf", version, about = "Mean-field experiments on block-structured networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (JSON, schema "blockmf/1").
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replica farms (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the number of observation grid intervals.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate the particle system once; writes the event log and empirical process.
    Simulate,
    /// Solve the mean-field equations.
    Meanfield,
    /// Build the mean-field flow by Picard iteration.
    Picard,
    /// Distance between empirical processes and the flow for every N.
    Chaos,
    /// Dependence between tagged nodes for every N.
    Multichaos,
    /// Large-deviation cost of a flow.
    LdpCost,
    /// Compare simulated marginals with the exact master equation.
    OracleCheck,
    /// Check a scenario without running anything.
    Validate,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Validation("--scenario is required".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        grid: cli.grid,
    };
    let scenario = Scenario::load(path, &overrides)?;
    if let Command::Validate = cli.command {
        return commands::validate(&scenario);
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cli.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    log::info!("running {:?} with {} threads", cli.command, pool.current_num_threads());
    let out = cli.out.as_path();
    pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&scenario, out),
        Command::Meanfield => commands::meanfield(&scenario, out),
        Command::Picard => commands::picard(&scenario, out),
        Command::Chaos => commands::chaos(&scenario, out),
        Command::Multichaos => commands::multichaos(&scenario, out),
        Command::LdpCost => commands::ldp_cost(&scenario, out),
        Command::OracleCheck => commands::oracle_check(&scenario, out),
        Command::Validate => unreachable!(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BLOCKMF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
