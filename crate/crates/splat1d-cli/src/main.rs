//! Command-line harness: generate synthetic datasets, train, evaluate,
//! render, and export observation-completeness data, all as files.
//!
//! Exit codes: 0 success, 1 usage, 2 IO/schema, 3 numeric failure.

mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<splat1d::scene::IoError> for CliError {
    fn from(e: splat1d::scene::IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<splat1d::train::TrainError> for CliError {
    fn from(e: splat1d::train::TrainError) -> Self {
        use splat1d::train::TrainError;
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::NumericFailure(it, m) => {
                CliError::Numeric(format!("numeric failure at iteration {it}: {m}"))
            }
            TrainError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "splat1d", version, about = "Flatland splatting trainer")]
struct Cli {
    /// Worker threads for pixel-parallel rendering (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen(commands::GenArgs),
    /// Train on a dataset; writes checkpoint, metrics CSV, and renders.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(commands::EvalArgs),
    /// Render one view from a checkpoint.
    Render(commands::RenderArgs),
    /// Export per-primitive OC values and per-view OC maps.
    ExportOc(commands::ExportOcArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonIo {
    /// Output directory; created if missing. All outputs stay inside.
    #[arg(long)]
    out: std::path::PathBuf,
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap handles --help/--version as "errors"; keep their exit 0.
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            print!("{e}");
            std::process::exit(0);
        }
        CliError::Usage(e.to_string())
    })?;

    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Render(args) => commands::render(args),
        Command::ExportOc(args) => commands::export_oc(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
