//! `stadkit` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

mod commands;
mod config;
mod debug;
mod report;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Metric;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Display) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }
}

impl From<stadkit::Error> for Failure {
    fn from(e: stadkit::Error) -> Self {
        let code = match e {
            stadkit::Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "stadkit",
    version,
    about = "Train and evaluate grid-anchor action detectors on synthetic clips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(GenDataArgs),
    /// Train the toy detector.
    Train(TrainArgs),
    /// Frame and video mAP on the test split.
    Eval(EvalArgs),
    /// Inference throughput on the test split.
    Bench(BenchArgs),
    /// Show the label assignment of one frame.
    AssignDebug(AssignDebugArgs),
    /// Side-by-side table of several eval runs.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_videos: Option<usize>,
    #[arg(long)]
    pub test_videos: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AssignerArg {
    Plus,
    Yowo,
}

impl From<AssignerArg> for stadkit::model::Assigner {
    fn from(a: AssignerArg) -> Self {
        match a {
            AssignerArg::Plus => stadkit::model::Assigner::Plus,
            AssignerArg::Yowo => stadkit::model::Assigner::Yowo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RegressionArg {
    Giou,
    SmoothL1,
}

impl From<RegressionArg> for stadkit::loss::RegressionLoss {
    fn from(r: RegressionArg) -> Self {
        match r {
            RegressionArg::Giou => stadkit::loss::RegressionLoss::Giou,
            RegressionArg::SmoothL1 => stadkit::loss::RegressionLoss::SmoothL1,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub assigner: Option<AssignerArg>,
    #[arg(long, value_enum)]
    pub regression: Option<RegressionArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Required unless a debug mode is selected.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub metric: Option<Metric>,
    /// Box IoU threshold of frame AP.
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Tube IoU threshold of video AP.
    #[arg(long)]
    pub video_iou_threshold: Option<f64>,
    /// Score the ground truth itself as detections.
    #[arg(long, conflicts_with = "debug_empty")]
    pub debug_oracle: bool,
    /// Score an empty detection list.
    #[arg(long)]
    pub debug_empty: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Directory for bench.json; the report is only printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AssignDebugArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub video: String,
    #[arg(long)]
    pub frame: usize,
    #[arg(long, value_enum, default_value = "plus")]
    pub assigner: AssignerArg,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predictions for the baseline assigner; a zero head is used otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write the JSON document here instead of printing it after the grid.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// `NAME=DIR` of an eval output directory; repeatable.
    #[arg(long = "run", required = true, value_parser = parse_run)]
    pub runs: Vec<(String, PathBuf)>,
    /// Directory for comparison.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => {
            Ok((name.to_string(), PathBuf::from(dir)))
        }
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("STADKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Failure::config(format!(
                "STADKIT_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::AssignDebug(a) => debug::assign_debug(a),
        Command::Report(a) => report::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
