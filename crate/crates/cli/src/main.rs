use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod render;

/// A caller error: bad flags, config or inputs. Exits with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "sweepseg", version, about = "Self-supervised defect segmentation for phased-array ultrasonic scans")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic RF volume with its truth CSV and truth mask.
    Synth(SynthArgs),
    /// Convert an RF volume to its envelope.
    Envelope(EnvelopeArgs),
    /// Train a model on clean envelope volumes.
    Train(TrainArgs),
    /// Run sweep inference and post-processing on a volume.
    Infer(InferArgs),
    /// Score a mask against ground truth.
    Eval(EvalArgs),
    /// Write a C-scan or B-scan as a PGM image.
    Render(RenderArgs),
    /// Train at several sampling strides and compare test log-likelihood.
    StrideStudy(StrideArgs),
    /// Synth, envelope, train, infer and eval in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RF volume path; the truth CSV and mask default to siblings of it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generate a defect-free plate of this thickness on the configured grid.
    #[arg(long)]
    pub clean_thickness: Option<f64>,
}

#[derive(Args)]
pub struct EnvelopeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub val: Vec<PathBuf>,
    /// Overrides `train.sampler.stride`.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<model>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// forward, backward or both.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub min_defect_mm: Option<f64>,
    #[arg(long)]
    pub padding: Option<String>,
    /// Also write `<out>.forward.usv`, `<out>.backward.usv` and `<out>.combined.usv`.
    #[arg(long)]
    pub stages: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// Also score the stage masks written next to `--mask` by `infer --stages`.
    #[arg(long)]
    pub stages: bool,
    #[arg(long)]
    pub truth: PathBuf,
    /// Envelope volume for the 6 dB reference masks used in localization.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// JSON report; CSV tables are written next to it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// C-scan (plan view) output path.
    #[arg(long, conflicts_with = "bscan", required_unless_present = "bscan")]
    pub cscan: Option<PathBuf>,
    /// Frame index and output path of a B-scan.
    #[arg(long, num_args = 2, value_names = ["FRAME", "OUT"])]
    pub bscan: Option<Vec<String>>,
    /// Time gate `lo:hi` (samples, half-open) for the C-scan.
    #[arg(long)]
    pub gate: Option<String>,
}

#[derive(Args)]
pub struct StrideArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub train: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub val: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub test: Vec<PathBuf>,
    /// Comma-separated strides; overrides `train.strides`.
    #[arg(long, value_delimiter = ',')]
    pub strides: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `paths.out_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<sweepseg::Error>().is_some_and(|e| e.is_usage())
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.cmd {
        Cmd::Synth(a) => commands::synth(&a),
        Cmd::Envelope(a) => commands::envelope(&a),
        Cmd::Train(a) => commands::train(&a),
        Cmd::Infer(a) => commands::infer(&a),
        Cmd::Eval(a) => commands::eval(&a),
        Cmd::Render(a) => commands::render(&a),
        Cmd::StrideStudy(a) => commands::stride_study(&a),
        Cmd::Pipeline(a) => commands::pipeline(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
