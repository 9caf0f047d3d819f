mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Invalid flags, config keys or values. Exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "resnesat",
    version,
    about = "Train and evaluate split-attention residual networks with spatial attention"
)]
struct Cli {
    /// key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log progress at info level (debug with -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic phantom dataset and its manifest.
    GenerateData(GenerateArgs),
    /// Write a k-fold split of a manifest.
    Split(SplitArgs),
    /// Train one model and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Run k-fold cross-validation and write a metrics report.
    Crossval(CrossvalArgs),
    /// Two-stage prediction for one image: presence, then source.
    Predict(PredictArgs),
    /// Print the layer-by-layer shape trace and parameter sizes.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct DataArgs {
    /// Dataset manifest (default: <data dir>/manifest.csv).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Data directory (default: $RESNESAT_DATA_DIR, else ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// presence or source.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    none: Option<usize>,
    #[arg(long)]
    primary: Option<usize>,
    #[arg(long)]
    secondary: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    images_per_patient: Option<usize>,
    /// Output directory (default: the data directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: Option<usize>,
    /// image (stratified by class) or patient (grouped by patient).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fold file to write (default: <data dir>/folds-<task>.txt).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ModelArgs {
    /// tiny or paper.
    #[arg(long)]
    preset: Option<String>,
    /// Enable the spatial-attention module (default true).
    #[arg(long)]
    sa: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate (default 1e-3 for presence, 1e-4 for source).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Fold file from `split`; trains on every fold but --fold.
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long)]
    fold: Option<usize>,
    /// Without a fold file, hold out this fraction (stratified) for testing.
    #[arg(long)]
    holdout: Option<f64>,
    /// Checkpoint path (default: <task>.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epoch log CSV (default: checkpoint path with a .csv extension).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long)]
    fold: Option<usize>,
    /// test, train or all (default: test with a fold file, else all).
    #[arg(long)]
    on: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Metrics CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    k: Option<usize>,
    /// image or patient.
    #[arg(long)]
    mode: Option<String>,
    /// Existing fold file; otherwise folds are drawn with --seed.
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long)]
    parallel_folds: Option<usize>,
    /// Also write one checkpoint per fold.
    #[arg(long)]
    save_checkpoints: Option<bool>,
    /// Report directory (default: cv-<task>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Presence checkpoint.
    #[arg(long)]
    presence: Option<PathBuf>,
    /// Source checkpoint, consulted only when a tumor is found.
    #[arg(long)]
    source: Option<PathBuf>,
    /// PGM image to classify.
    image: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Checkpoint to describe instead of a preset.
    checkpoint: Option<PathBuf>,
    /// tiny or paper (default tiny).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    sa: Option<bool>,
    /// Also report the parameter overhead of the spatial-attention modules.
    #[arg(long)]
    diff_sa: bool,
}

/// 1 usage, 2 data or model error, 3 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    fn core_code(e: &resnesat::Error) -> u8 {
        match e {
            resnesat::Error::Diverged { .. } => 3,
            resnesat::Error::InFold { source, .. } => core_code(source),
            resnesat::Error::Config(_) => 1,
            _ => 2,
        }
    }
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<resnesat::Error>() {
            return core_code(e);
        }
    }
    2
}

/// The error and its causes, skipping causes already quoted by the layer
/// above.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::GenerateData(a) => commands::generate(cfg, a),
        Command::Split(a) => commands::split(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Crossval(a) => commands::crossval(cfg, a),
        Command::Predict(a) => commands::predict(cfg, a),
        Command::Inspect(a) => commands::inspect(cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
