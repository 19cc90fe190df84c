//! Command-line driver: features, training, evaluation and experiment reports.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code 2 for bad invocations and missing inputs, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(String),
}

impl From<dkdfmh::Error> for Failure {
    fn from(e: dkdfmh::Error) -> Self {
        match e {
            dkdfmh::Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Run(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "dkdfmh", version, about = "Decoupled knowledge distillation for speech emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel features into train.dkdf and test.dkdf.
    Features(FeaturesArgs),
    /// Train a teacher (cross-entropy) or a distilled student.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a feature directory.
    Eval(EvalArgs),
    /// Train the six ablation configurations.
    Ablation(AblationArgs),
    /// Train DKD students over a range of beta values.
    BetaSweep(BetaSweepArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: Common,
    /// Generate the built-in synthetic corpus.
    #[arg(long, conflicts_with = "in_dir", required_unless_present = "in_dir")]
    synthetic: bool,
    /// IEMOCAP-layout corpus root (Session1, Session2, ...).
    #[arg(long)]
    in_dir: Option<PathBuf>,
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Data seed (synthesis and split).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Teacher,
    Student,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    role: Role,
    /// Directory written by `features`.
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    teacher_ckpt: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// ce_only, kd, tckd_only, nckd_only or dkd.
    #[arg(long)]
    variant: Option<dkdfmh::distill::Variant>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write metrics.json and confusion.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    cache: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct BetaSweepArgs {
    #[command(flatten)]
    ablation: AblationArgs,
    /// Comma-separated beta values.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("DKDFMH_THREADS") else {
        return Ok(());
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(dkdfmh::set_threads(n)?),
        _ => Err(Failure::Usage(format!("DKDFMH_THREADS must be a positive integer, got {value:?}"))),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Features(a) => commands::features(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablation(a) => commands::experiment(a, commands::Experiment::Ablation),
        Command::BetaSweep(a) => commands::experiment(a.ablation, commands::Experiment::BetaSweep(a.betas)),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: usage: {}", one_line(&msg));
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
    }
}
