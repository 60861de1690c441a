mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gazeattn::model::Architecture;

use crate::config::{resolve_config, CommandId, FlagValues};

/// Gaze-based attention recognition for human-robot collaboration.
#[derive(Parser)]
#[command(name = "gazeattn", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic gaze/attention dataset.
    SynthData(Flags),
    /// Train the gaze regressor on a gaze manifest.
    TrainGaze(Flags),
    /// Transfer a gaze checkpoint into the attention classifier and fine-tune it.
    TransferTrain(Flags),
    /// Leave-one-subject-out evaluation on an attention manifest.
    Loso(Flags),
    /// Evaluate attention checkpoints on an assembly test set.
    EvalAssembly(Flags),
    /// Classify a frame stream (or replay an event log) and emit cobot commands.
    Infer(Flags),
    /// Re-render a saved report.json.
    Report(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON run configuration (overridden by flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Comma-separated validation subjects for gaze training.
    #[arg(long, value_delimiter = ',')]
    val_subjects: Option<Vec<String>>,
    #[arg(long)]
    gaze_checkpoint: Option<PathBuf>,
    /// Attention checkpoint (repeatable).
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Base directory of the videos referenced by a segment manifest.
    #[arg(long)]
    videos: Option<PathBuf>,
    /// Frame directory or video file to stream.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Event log to replay.
    #[arg(long)]
    events: Option<PathBuf>,
    /// report.json to re-render.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Backbone architecture: vgg16 or tiny.
    #[arg(long, value_parser = parse_architecture)]
    backbone: Option<Architecture>,
    #[arg(long)]
    input_side: Option<usize>,
    /// Checkpoint providing initial conv weights.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Learning rate of the stage this command trains.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Smoothing window in frames.
    #[arg(long)]
    window: Option<usize>,
    /// Command dwell time in seconds.
    #[arg(long)]
    dwell: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    gaze_per_subject: Option<usize>,
    #[arg(long)]
    image_side: Option<usize>,
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: gazeattn::model::ModelError| e.to_string())
}

impl Flags {
    fn values(&self) -> FlagValues {
        FlagValues {
            seed: self.seed,
            out: self.out.clone(),
            manifest: self.manifest.clone(),
            val_manifest: self.val_manifest.clone(),
            val_subjects: self.val_subjects.clone(),
            gaze_checkpoint: self.gaze_checkpoint.clone(),
            models: (!self.models.is_empty()).then(|| self.models.clone()),
            videos: self.videos.clone(),
            video: self.video.clone(),
            events: self.events.clone(),
            report: self.report.clone(),
            backbone: self.backbone,
            input_side: self.input_side,
            pretrained: self.pretrained.clone(),
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            window: self.window,
            dwell: self.dwell,
            fps: self.fps,
            subjects: self.subjects,
            per_class: self.per_class,
            gaze_per_subject: self.gaze_per_subject,
            image_side: self.image_side,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let (id, flags) = match &cli.command {
        Command::SynthData(f) => (CommandId::SynthData, f),
        Command::TrainGaze(f) => (CommandId::TrainGaze, f),
        Command::TransferTrain(f) => (CommandId::TransferTrain, f),
        Command::Loso(f) => (CommandId::Loso, f),
        Command::EvalAssembly(f) => (CommandId::EvalAssembly, f),
        Command::Infer(f) => (CommandId::Infer, f),
        Command::Report(f) => (CommandId::Report, f),
    };
    let result = resolve_config(id, flags.config.as_deref(), &flags.values())
        .map_err(commands::CliError::from)
        .and_then(|cfg| commands::execute(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
