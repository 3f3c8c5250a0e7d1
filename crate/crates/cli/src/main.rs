//! `viewsynth` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "viewsynth",
    version,
    about = "Novel view synthesis from stereo sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the configured synthetic train/test scenes in KITTI layout.
    GenData(GenData),
    /// Train the stereo depth network.
    TrainDepth(TrainDepth),
    /// Train the inpainting network on warped windows.
    TrainInpaint(TrainInpaint),
    /// Render one target frame and write the intermediate images.
    Render(Render),
    /// Tabulate errors of trained inpainting models across spacings.
    Evaluate(Evaluate),
    /// Finite-difference gradient checks in 64-bit.
    Gradcheck(Gradcheck),
    /// Errors of median fusion alone across spacings.
    BaselineMedian(BaselineMedian),
}

#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// TOML config; repeat to layer files (later ones win).
    #[arg(long = "config", short = 'c', value_name = "FILE")]
    pub files: Vec<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct DepthArgs {
    /// Depth network checkpoint.
    #[arg(long, value_name = "CKPT", conflicts_with = "gt_depth")]
    pub depth: Option<PathBuf>,
    /// Use ground-truth depth instead of the depth network.
    #[arg(long)]
    pub gt_depth: bool,
}

#[derive(Args, Debug)]
pub struct GenData {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainDepth {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Continue from a training checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainInpaint {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub depth: DepthArgs,
    #[arg(long)]
    pub spacing: Option<usize>,
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Render {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub depth: DepthArgs,
    /// Inpainting network checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub inpaint: PathBuf,
    /// Index into the chosen split.
    #[arg(long, default_value_t = 0)]
    pub sequence: usize,
    /// Target frame; defaults to the first frame whose window fits.
    #[arg(long)]
    pub frame: Option<usize>,
    /// Reference spacing in frames; 0 uses the target as its own references.
    #[arg(long)]
    pub spacing: Option<usize>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct Evaluate {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub depth: DepthArgs,
    /// Model trained at a spacing, as `SPACING=CKPT`; repeat for each row.
    #[arg(long = "inpaint", value_name = "SPACING=CKPT", value_parser = parse_trained, required = true)]
    pub models: Vec<(usize, PathBuf)>,
    /// Tested spacings.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub spacings: Vec<usize>,
    /// Add median fusion rows.
    #[arg(long)]
    pub median: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineMedian {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub depth: DepthArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub spacings: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Gradcheck {
    /// Only suites whose name contains this.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result lines are written here.
    #[arg(long, default_value = "gradcheck.txt")]
    pub out: PathBuf,
    /// Also run a deliberately wrong operation, to see a failure reported.
    #[arg(long, hide = true)]
    pub with_fixture: bool,
}

fn parse_trained(s: &str) -> Result<(usize, PathBuf), String> {
    let (a, b) = s
        .split_once('=')
        .ok_or_else(|| format!("expected SPACING=CKPT, got `{s}`"))?;
    let spacing = a.trim().parse().map_err(|_| format!("bad spacing `{a}`"))?;
    if b.is_empty() {
        return Err("empty checkpoint path".into());
    }
    Ok((spacing, PathBuf::from(b)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
