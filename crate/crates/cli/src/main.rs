//! `ctlogic`: categorize entities, learn temporal rules, evaluate and explain
//! predictions.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use ctlogic_categorize::CategorizeError;
use ctlogic_core::TkgError;

use config::{ApplyOptions, CategorizeOptions, DataOptions, EvalOptions, FileConfig, LearnOptions};

/// Bad flags, config values or inputs the user has to fix. Exits with 2.
#[derive(Debug)]
pub struct ConfigError(String);

impl ConfigError {
    pub fn msg(message: impl Into<String>) -> anyhow::Error {
        anyhow::Error::new(ConfigError(message.into()))
    }

    pub fn wrap(err: impl fmt::Display) -> anyhow::Error {
        Self::msg(err.to_string())
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Sorts library errors into config errors and runtime errors.
pub fn classify(err: TkgError) -> anyhow::Error {
    match err {
        TkgError::InvalidParameter(_)
        | TkgError::CategoriesRequired
        | TkgError::MissingCategory(_)
        | TkgError::VocabularyMismatch(_) => ConfigError::wrap(err),
        other => anyhow::Error::new(other),
    }
}

pub fn classify_categorize(err: CategorizeError) -> anyhow::Error {
    match err {
        CategorizeError::InvalidParameter(_) => ConfigError::wrap(err),
        other => anyhow::Error::new(other),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ctlogic",
    version,
    about = "Temporal logic rules over knowledge graphs, with entity categories"
)]
struct Cli {
    /// TOML file with defaults for any option; flags win over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory for every output file
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster entity embeddings into categories
    Categorize(CategorizeArgs),
    /// Learn a rule bank from the training split
    Learn(LearnArgs),
    /// Rank test queries and write metrics
    Evaluate(EvaluateArgs),
    /// Trace the rules and groundings behind one prediction
    Explain(ExplainArgs),
    /// Summarize a dataset and optionally a rule bank
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct CategorizeArgs {
    #[command(flatten)]
    opts: CategorizeOptions,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[command(flatten)]
    data: DataOptions,
    #[command(flatten)]
    learn: LearnOptions,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataOptions,
    #[command(flatten)]
    apply: ApplyOptions,
    #[command(flatten)]
    eval: EvalOptions,
    /// Rule bank (default: <out>/rules.jsonl)
    #[arg(long)]
    bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataOptions,
    #[command(flatten)]
    apply: ApplyOptions,
    /// Rule bank (default: <out>/rules.jsonl)
    #[arg(long)]
    bank: Option<PathBuf>,
    /// `subject|relation|timestamp` with raw dataset labels; `_rel` is the inverse
    #[arg(long)]
    query: String,
    /// noisy_or or max_plus
    #[arg(long, default_value = "noisy_or")]
    aggregation: String,
    /// Ranked candidates to list
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataOptions,
    #[arg(long)]
    bank: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::read(path)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(file.workers);
    if let Some(n) = workers {
        if n == 0 {
            return Err(ConfigError::msg("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("starting worker pool: {e}"))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("run"));
    let run = commands::Run { out, workers };

    match cli.command {
        Command::Categorize(mut a) => {
            a.opts.layer(&file.categorize);
            commands::categorize(&run, &a.opts)
        }
        Command::Learn(mut a) => {
            a.data.layer(&file.data);
            a.learn.layer(&file.learn);
            commands::learn(&run, &a.data, &a.learn)
        }
        Command::Evaluate(mut a) => {
            a.data.layer(&file.data);
            a.apply.layer(&file.apply);
            a.eval.layer(&file.evaluate);
            commands::evaluate(&run, &a.data, &a.apply, &a.eval, a.bank.as_deref())
        }
        Command::Explain(mut a) => {
            a.data.layer(&file.data);
            a.apply.layer(&file.apply);
            let request = commands::ExplainRequest {
                query: &a.query,
                aggregation: &a.aggregation,
                top: a.top,
            };
            commands::explain(&run, &a.data, &a.apply, a.bank.as_deref(), &request)
        }
        Command::Stats(mut a) => {
            a.data.layer(&file.data);
            commands::stats(&run, &a.data, a.bank.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
