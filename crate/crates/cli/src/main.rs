//! `iam`: data generation, training, evaluation, streaming inference,
//! inspection and gradient checking.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iam_core::Error;

#[derive(Parser, Debug)]
#[command(name = "iam", version, about = "Inductive attention action anticipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/val streams and their oracle ceilings.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus a metrics CSV.
    Train(TrainArgs),
    /// Score a checkpoint on annotated features.
    Eval(EvalArgs),
    /// Read an IAMF stream on stdin and print top-5 predictions per frame.
    Stream(StreamArgs),
    /// Dump per-step attention weights and gate statistics.
    Inspect(InspectArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Context symbol count K (also the action count).
    #[arg(long, default_value_t = 4)]
    pub contexts: usize,
    #[arg(long, default_value_t = 3)]
    pub segment_frames: usize,
    #[arg(long, default_value_t = 6)]
    pub gap_frames: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Feature dimension F.
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Frames in the training stream.
    #[arg(long, default_value_t = 3000)]
    pub frames: usize,
    /// Frames in the validation stream; 0 skips it.
    #[arg(long, default_value_t = 1500)]
    pub val_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    pub fps: f32,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub val_features: Option<PathBuf>,
    #[arg(long, requires = "val_features")]
    pub val_annotations: Option<PathBuf>,
    /// `key=value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    /// Defaults to `<ckpt-out>.metrics.csv`.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Defaults to `<ckpt-out>.best`.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
    #[arg(long)]
    pub jitter: bool,
    #[arg(long)]
    pub inverse_count_weights: bool,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long, value_parser = ["prediction", "frame"])]
    pub query: Option<String>,
    #[arg(long)]
    pub window_seconds: Option<f64>,
    #[arg(long)]
    pub tau_a: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub topk: Vec<usize>,
    /// Named class subset file, one id per line; repeatable.
    #[arg(long, value_name = "NAME=FILE")]
    pub subset: Vec<String>,
    /// `action_id,verb_id` lines.
    #[arg(long)]
    pub verb_map: Option<PathBuf>,
    /// `action_id,noun_id` lines.
    #[arg(long)]
    pub noun_map: Option<PathBuf>,
    /// Overrides the anticipation time stored in the checkpoint.
    #[arg(long)]
    pub tau_a: Option<f64>,
    /// Report prefix; writes `<out>.csv` and `<out>.per_class.csv`.
    /// Defaults to `<ckpt>.eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub trace_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long = "C", default_value_t = 5)]
    pub classes: usize,
    #[arg(long = "S", default_value_t = 4)]
    pub memory: usize,
    #[arg(long = "F", default_value_t = 8)]
    pub features: usize,
    #[arg(long = "T", default_value_t = 6)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

/// Exit statuses.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const GRAD_CHECK: u8 = 5;
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) | Error::Divergence { .. } => exit::NUMERIC,
        _ => exit::DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Stream(a) => commands::stream(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
