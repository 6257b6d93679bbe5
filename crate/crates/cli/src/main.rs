use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use kappatune::selection::Strategy;
use kappatune::spectral::{DEFAULT_SIGMA_CAP, DEFAULT_ZERO_TOL};

mod commands;
mod render;

/// Exit code for successful runs.
const EXIT_OK: u8 = 0;
/// A verification or experiment assertion did not hold.
const EXIT_CHECKS_FAILED: u8 = 1;
/// Bad flags, unreadable input, or malformed files.
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "kappatune", version, about = "Condition-number analysis and selective fine-tuning plans")]
struct Cli {
    /// Worker threads for per-tensor and per-seed parallelism.
    #[arg(long, global = true, env = "KAPPA_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StrategyArg {
    LowestKappa,
    HighestKappa,
    Random,
    ByName,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::LowestKappa => Strategy::LowestKappa,
            StrategyArg::HighestKappa => Strategy::HighestKappa,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::ByName => Strategy::ByName,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a JSON-lines spectral report for every eligible tensor.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Singular values below zero_tol·σ_max count as zero.
        #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
        zero_tol: f64,
        /// Extra name globs to exclude, on top of the defaults.
        #[arg(long = "exclude", value_name = "GLOB")]
        excludes: Vec<String>,
        /// Most singular values kept per line.
        #[arg(long, default_value_t = DEFAULT_SIGMA_CAP)]
        sigma_cap: usize,
    },
    /// Rank eligible tensors and write a selection plan.
    #[command(group(ArgGroup::new("budget").required(true).args(["k", "budget_fraction"])))]
    Plan {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of tensors to unfreeze.
        #[arg(long)]
        k: Option<usize>,
        /// Budget as a fraction of eligible tensors.
        #[arg(long)]
        budget_fraction: Option<f64>,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the random strategy.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
        zero_tol: f64,
        #[arg(long = "exclude", value_name = "GLOB")]
        excludes: Vec<String>,
    },
    /// Run the entropy and log-volume optimum checks; exit 1 if any fails.
    VerifyTheory {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the low-κ vs high-κ forgetting experiment.
    DemoForgetting {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize a spectral, forgetting or verification report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Rows highlighted at each end of the κ table.
        #[arg(long, default_value_t = 3)]
        top: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a KTAN checkpoint from a manifest of raw blobs.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a freshly initialized MLP checkpoint.
    InitMlp {
        /// Layer sizes, input first, e.g. 16,32,8.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// identity, tanh, sigmoid, softplus or leaky_relu(ALPHA).
        #[arg(long, default_value = "tanh")]
        activation: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Why a command stopped early.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Checks(String),
}

impl From<kappatune::Error> for Failure {
    fn from(e: kappatune::Error) -> Self {
        use kappatune::Error as E;
        match e.root() {
            E::ConvergenceFailure { .. } | E::Divergence { .. } => Failure::Checks(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

pub type CmdResult = Result<u8, Failure>;

fn run(cli: Cli) -> CmdResult {
    if cli.threads == 0 {
        return Err(Failure::Usage("--threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    log::info!("threads: {}", cli.threads);

    match cli.command {
        Command::Analyze {
            checkpoint,
            out,
            zero_tol,
            excludes,
            sigma_cap,
        } => commands::analyze(&checkpoint, &out, zero_tol, &excludes, sigma_cap),
        Command::Plan {
            checkpoint,
            k,
            budget_fraction,
            strategy,
            out,
            seed,
            zero_tol,
            excludes,
        } => {
            let budget = match (k, budget_fraction) {
                (Some(k), None) => commands::Budget::Count(k),
                (None, Some(f)) => commands::Budget::Fraction(f),
                _ => unreachable!("clap enforces exactly one budget flag"),
            };
            commands::plan(&checkpoint, budget, strategy.into(), &out, seed, zero_tol, &excludes)
        }
        Command::VerifyTheory {
            samples,
            seed,
            max_dim,
            out,
        } => commands::verify_theory(samples, seed, max_dim, &out),
        Command::DemoForgetting { config, out_dir } => commands::demo_forgetting(&config, &out_dir),
        Command::Report {
            input,
            format,
            top,
            out,
        } => commands::report(&input, format == ReportFormat::Csv, top, out.as_deref()),
        Command::Ingest { manifest, out } => commands::ingest(&manifest, &out),
        Command::InitMlp {
            sizes,
            seed,
            activation,
            out,
        } => commands::init_mlp(&sizes, seed, &activation, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    log::info!("resolved config: {cli:?}");
    let code = match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Checks(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECKS_FAILED
        }
    };
    ExitCode::from(code)
}
