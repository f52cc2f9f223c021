//! `convflow`: optical flow estimation with convective regularization.

mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "convflow", version, about = "Space-time optical flow with convective acceleration regularization")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate flow on a directory of grayscale frames.
    Estimate(EstimateArgs),
    /// Write a synthetic scenario (frames and ground truth) to disk.
    Synth(SynthArgs),
    /// Compare estimated flow files with ground truth.
    Evaluate(EvaluateArgs),
    /// Render flow files as color-wheel PNGs.
    Colorize(ColorizeArgs),
    /// Print an iteration trace file as a table.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Traffic,
    Passat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    Gradient,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory holding the input frames.
    pub frames: PathBuf,
    /// Output directory for flow files, trace and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// printf-style file pattern with a frame index, e.g. `frame_%04d.png`.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Frames to use as `LENGTH` or `OFFSET:LENGTH`.
    #[arg(long, default_value = "30")]
    pub window: String,
    /// Parameter preset from the reference experiments.
    #[arg(long, value_enum, conflicts_with_all = ["alpha", "beta"])]
    pub preset: Option<Preset>,
    /// Convective weight α₁ (0 gives the isotropic model).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Isotropic weight β₁.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Initialization weight β₀ (default α₁, or β₁ when α₁ = 0).
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Floor ε of the contrast weight.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    /// Frame spacing is 1/dt-factor in units of the pixel spacing.
    #[arg(long, default_value_t = 8)]
    pub dt_factor: u32,
    /// Maximum number of outer iterations.
    #[arg(long, default_value_t = 8)]
    pub max_iters: usize,
    /// Stop once the relative step norm drops below this value.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Relative residual tolerance of the inner linear solves.
    #[arg(long, default_value_t = 1e-8)]
    pub cg_tol: f64,
    /// Gauss points per axis.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub quadrature: u8,
    /// Data term weighting.
    #[arg(long, value_enum, default_value = "gradient")]
    pub weighting: Weighting,
    /// Also write color-wheel PNGs of every flow frame.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario name.
    pub scenario: String,
    /// Output directory; receives `frames/`, `truth/` and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Image format of the frames.
    #[arg(long, value_enum, default_value = "png")]
    pub format: FrameFormat,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of estimated flow files.
    pub estimate: PathBuf,
    /// Directory of ground-truth flow files.
    pub truth: PathBuf,
    /// Restrict the statistics to the object interiors of this scenario.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Write the statistics as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    /// Directory of flow files.
    pub flow: PathBuf,
    /// Output directory for PNGs.
    #[arg(long)]
    pub out: PathBuf,
    /// Speed mapped to full saturation (default: 99th percentile).
    #[arg(long)]
    pub max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Trace file written by `estimate`.
    pub file: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("--threads: cannot build thread pool")?;
    }
    match cli.command {
        Command::Estimate(args) => commands::estimate(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Colorize(args) => commands::colorize(&args),
        Command::Trace(args) => commands::trace(&args),
    }
}
