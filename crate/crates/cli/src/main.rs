//! `tamperloc` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime or I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tamperloc::config::{Preset, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tamperloc", version, about = "Pixel-level image tampering localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Starting preset (desk | full); ignored when --config names one.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set base_lr=1e-3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic forgery dataset.
    Synth(SynthArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Score predictions or a checkpoint against ground-truth masks.
    Eval(EvalArgs),
    /// Write probability and mask maps for PPM images.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Side length of the square images.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Donor corpus with `images/` and `donor_masks/`; requires --hosts.
    #[arg(long, requires = "hosts")]
    donors: Option<PathBuf>,
    /// Directory of host PPM images; requires --donors.
    #[arg(long, requires = "donors")]
    hosts: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override max_iters.
    #[arg(long)]
    iters: Option<usize>,
    /// Decoder fuse subset, e.g. `X4` or `X4,X3`.
    #[arg(long, value_name = "LEVELS")]
    ablate_fuse: Option<String>,
    /// Training loss (combined | ce).
    #[arg(long)]
    loss: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Network weights; the config defaults to `config.txt` beside it.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Directory of `<name>.prob.pgm` or `<name>.pgm` probability maps.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reflect-pad inputs to a multiple of 32 and crop the maps back.
    #[arg(long)]
    pad: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<tamperloc::Error> for Failure {
    fn from(e: tamperloc::Error) -> Self {
        match e {
            tamperloc::Error::Config(_) | tamperloc::Error::InputSize { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn resolve_config(args: &ConfigArgs, fallback: Option<PathBuf>) -> Result<RunConfig, Failure> {
    let mut cfg = match args.config.clone().or(fallback) {
        Some(path) => RunConfig::load(&path).map_err(|e| match e {
            tamperloc::Error::Io(io) => {
                Failure::Runtime(format!("cannot read config {}: {io}", path.display()))
            }
            other => other.into(),
        })?,
        None => RunConfig::preset(Preset::parse(&args.preset)?),
    };
    for o in &args.overrides {
        cfg.set_assignment(o)?;
    }
    Ok(cfg)
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var("TAMPERLOC_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Usage(format!("TAMPERLOC_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
