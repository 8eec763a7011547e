mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FusionKind;
use glyphemb::classifier::ModelKind;
use glyphemb::Error;

/// Visual character embeddings: datasets, training, evaluation, analysis.
#[derive(Parser, Debug)]
#[command(name = "glyphemb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label, filter and split a corpus from an offline category graph.
    Dataset(DatasetArgs),
    /// Train a classifier from a run config.
    Train(TrainArgs),
    /// Evaluate one checkpoint, or fuse two.
    Eval(EvalArgs),
    /// Occlusion heatmaps or nearest-neighbor characters.
    Analyze(AnalyzeArgs),
    /// Dump glyph images as PGM files (debugging aid).
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// `parent<TAB>child` category edges.
    #[arg(long)]
    pub graph: PathBuf,
    /// `article<TAB>category` memberships.
    #[arg(long)]
    pub memberships: PathBuf,
    /// Main categories, one per line, in tie-break order [default: the 12 built-in ones].
    #[arg(long)]
    pub roots: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// One checkpoint, or two (lookup and visual) for late or fallback fusion.
    #[arg(long = "checkpoint", required = true, num_args = 1)]
    pub checkpoints: Vec<PathBuf>,
    /// Labeled `title<TAB>category` file to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Run config supplying `fusion` and `threshold` when the flags are absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: none]
    #[arg(long, value_enum)]
    pub fusion: Option<FusionKind>,
    /// Fallback routes a title to the visual model when its average
    /// training-set character frequency is at most this [default: 0].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Occlusion,
    Knn,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
    /// Query characters.
    #[arg(long, conflicts_with = "chars_file")]
    pub chars: Option<String>,
    /// File whose characters (whitespace ignored) are the queries.
    #[arg(long)]
    pub chars_file: Option<PathBuf>,
    /// Neighbors per query.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub chars: String,
    /// TrueType/OpenType font; without it the procedural fixture set is used.
    #[arg(long)]
    pub font: Option<PathBuf>,
    #[arg(long, default_value_t = 36.0)]
    pub pixel_size: f32,
    #[arg(long, default_value = "radicals")]
    pub fixture: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status per failure class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Font { .. } | Error::Checkpoint(_) | Error::Io { .. } => 3,
        Error::Contract(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dataset(a) => commands::dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Render(a) => commands::render(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glyphemb: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
