//! `agcd`: data generation, narration, training, evaluation, rollout,
//! rendering and ablations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use agcd_core::evalkit::{TextMode, Variant};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "agcd", version, about = "Narrative-guided decoding for toy gridded forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with oracle annotations.
    GenData(GenDataArgs),
    /// Narrate every input state of a dataset into the cache.
    Narrate(NarrateArgs),
    /// Train a forecaster and write a checkpoint and loss curve.
    Train(TrainArgs),
    /// One-step evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Causal multi-step rollout with narrative editing.
    Rollout(RolloutArgs),
    /// Render one state as PPM heatmaps.
    Render(RenderArgs),
    /// Run an ablation suite end to end.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Steps per sequence after the initial state.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args, Debug)]
struct NarrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    #[arg(long)]
    cache: PathBuf,
    /// Refinement budget; overrides the config.
    #[arg(long)]
    rounds: Option<usize>,
    /// Mock defect rate; overrides the config.
    #[arg(long)]
    defect_rate: Option<f64>,
    /// Dataset whose statistics normalize the digests (defaults to --data).
    #[arg(long)]
    stats_from: Option<PathBuf>,
    /// Narrate states with time index below this (defaults to every input state).
    #[arg(long)]
    max_time: Option<i64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    text: Option<TextArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file to write.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    ckpt: PathBuf,
    /// Test dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    text: Option<TextArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Check provenance and exit 1 on a violation.
    #[arg(long)]
    audit: bool,
    /// Fault injection: feed the true state at this step.
    #[arg(long)]
    inject_leak: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sample: String,
    /// One variable; all variables when omitted.
    #[arg(long)]
    var: Option<String>,
    #[arg(long, default_value_t = 0)]
    time: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Crid,
    Mmnp,
    Agents,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Baseline,
    Agcd,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Agcd => Variant::Agcd,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TextArg {
    Matched,
    Shuffled,
    Empty,
}

impl From<TextArg> for TextMode {
    fn from(t: TextArg) -> Self {
        match t {
            TextArg::Matched => TextMode::Matched,
            TextArg::Shuffled => TextMode::Shuffled,
            TextArg::Empty => TextMode::Empty,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Narrate(a) => commands::narrate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Render(a) => commands::render(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
