//! `sidesense`: generate, preprocess, train, evaluate, federate and simulate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sidesense_core::{Error, ErrorCategory};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Runtime => 4,
            },
        }
    }
}

const OVERRIDE_HELP: &str = "\
Any config key can be overridden with a dotted flag, for example
  --train.patience 10 --fusion.head tracking --eval.angles [0,45]
Values are parsed as JSON, falling back to a plain string.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime or numeric error.";

#[derive(Debug, Parser)]
#[command(name = "sidesense", version, about = "Multi-angle radar gesture recognition pipeline", after_help = OVERRIDE_HELP)]
struct Cli {
    /// Run configuration (JSON); missing keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output`)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Root seed (overrides `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (overrides `threads`)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-angle dataset into <output>/dataset
    Generate,
    /// Bin and resample every cloud into <output>/preprocessed
    Preprocess {
        /// Raw dataset directory [default: <output>/dataset]
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a model; writes model.json and history.csv
    Train {
        /// Dataset directory [default: <output>/preprocessed]
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate on the test split, optionally on an angle subset
    Evaluate {
        #[command(flatten)]
        io: EvalIo,
        /// Comma-separated angle subset, e.g. 0,45
        #[arg(long, value_delimiter = ',')]
        angles: Option<Vec<u16>>,
    },
    /// Angle drop-out protocol for every number of dropped angles
    Dropout {
        #[command(flatten)]
        io: EvalIo,
    },
    /// Paired-angle protocol over `eval.pairs`
    Pairs {
        #[command(flatten)]
        io: EvalIo,
    },
    /// Angle permutation protocol (tracking head)
    Permute {
        #[command(flatten)]
        io: EvalIo,
    },
    /// Per-gesture angle importance (tracking head)
    Importance {
        #[command(flatten)]
        io: EvalIo,
    },
    /// Federated training with participants split by subject
    Federate {
        /// Dataset directory [default: <output>/preprocessed]
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the sidelink sensing simulation
    Simulate {
        /// Scenario JSON (overrides `sim.scenario`)
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Dataset to degrade with the simulated interference; written to <output>/corrupted
        #[arg(long)]
        corrupt: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalIo {
    /// Dataset directory [default: <output>/preprocessed]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trained model [default: <output>/model.json]
    #[arg(long)]
    model: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Dropout { .. } => "dropout",
            Command::Pairs { .. } => "pairs",
            Command::Permute { .. } => "permute",
            Command::Importance { .. } => "importance",
            Command::Federate { .. } => "federate",
            Command::Simulate { .. } => "simulate",
        }
    }
}

fn run() -> Result<(), CliError> {
    let (args, mut overrides) = config::extract_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(o) = &cli.output {
        overrides.push(("output".into(), serde_json::to_string(o).expect("path serializes")));
    }
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    let cfg = config::RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    commands::execute(&cli.command, &cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
