//! `kernel-agent`: run benchmark sweeps and summarise their logs.
//!
//! Exit codes: 0 when results were produced (failing kernels are results),
//! 1 on an engine fault, 2 on invalid input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Ablation;
use kernel_agent::metrics::{Grouping, Selector};

#[derive(Debug, Parser)]
#[command(
    name = "kernel-agent",
    version,
    about = "Agentic GPU kernel generation harness"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log prompts, responses and runner traffic.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Maximum concurrent executions (and replica threads).
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the agent over every task of a benchmark.
    Run(RunArgs),
    /// Summarise run logs.
    Report(ReportArgs),
    /// pass@k table over replica logs.
    Scaling(ScalingArgs),
    /// Show which corpus entry a piece of code retrieves.
    Retrieve(RetrieveArgs),
    /// Check a benchmark manifest (and config, if given).
    Validate(ValidateArgs),
    /// Evaluate a directory of finished kernels against a benchmark.
    Evaluate(EvaluateArgs),
    /// Runner speaking the executor protocol, backed by the mock executor.
    #[command(hide = true)]
    MockRunner(MockRunnerArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Benchmark manifest.
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    /// Overrides agent.max_iterations.
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Disable an agent feature; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of replica logs.
    pub logs: PathBuf,
    #[arg(long, default_value = "difficulty")]
    pub group: Grouping,
    /// best, final or iter:<n>.
    #[arg(long, default_value = "best")]
    pub selector: Selector,
    /// Divide exec accuracy by call-ok tasks instead of all tasks.
    #[arg(long)]
    pub conditional: bool,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    pub logs: PathBuf,
    /// Defaults to the number of replicas.
    #[arg(long)]
    pub max_k: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub query_file: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Exclude this benchmark's task ids.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub manifest: PathBuf,
    /// Holds `<task_id>.py` for each task.
    #[arg(long)]
    pub kernels: PathBuf,
}

#[derive(Debug, Args)]
pub struct MockRunnerArgs {
    /// Request document; stdin when absent. The report goes to `--out`,
    /// or stdout.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if cli.global.trace { "trace" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();

    let result = match cli.command {
        Command::Run(a) => commands::run(&cli.global, &a),
        Command::Report(a) => commands::report(&cli.global, &a),
        Command::Scaling(a) => commands::scaling(&cli.global, &a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Validate(a) => commands::validate(&cli.global, &a),
        Command::Evaluate(a) => commands::evaluate(&cli.global, &a),
        Command::MockRunner(a) => commands::mock_runner(&cli.global, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(fault) => {
            eprintln!("error: {:#}", fault.error());
            ExitCode::from(fault.code())
        }
    }
}
