use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sodkit_core::network::{Ablation, NetworkConfig, INPUT_MULTIPLE};
use sodkit_core::train::{DEFAULT_LR, TOY_BATCH};

use crate::error::{CliError, Result};

/// Saliency evaluation, inference and toy training.
#[derive(Debug, Parser)]
#[command(name = "lba-sodkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a directory of predicted maps against ground-truth masks.
    Eval(EvalArgs),
    /// Run the network on one image and write the final map.
    Forward(ForwardArgs),
    /// Train a toy-scale network and write its weights.
    TrainToy(TrainArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted saliency maps (.pgm or .png, 8-bit gray).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth masks, paired by file stem.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the dataset-level threshold curves.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Worker threads; falls back to LBA_SODKIT_THREADS, then the core count.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Dataset name for the report; defaults to the ground-truth directory name.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Square input resolution; a multiple of 32.
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    /// Fraction of the full {64, 128, 320, 512} stage widths.
    #[arg(long, default_value_t = 0.125)]
    pub channel_scale: f64,
    /// Which attention modules are present.
    #[arg(long, default_value = "full", value_parser = parse_ablation)]
    pub ablation: Ablation,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| "expected one of baseline, efaba, gdal, full".to_string())
}

impl NetArgs {
    pub fn config(&self, seed: u64) -> Result<NetworkConfig> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(INPUT_MULTIPLE) {
            return Err(CliError::Usage(format!(
                "--input-size {} is not a positive multiple of {INPUT_MULTIPLE}",
                self.input_size
            )));
        }
        let config = NetworkConfig {
            input_size: self.input_size,
            channel_scale: self.channel_scale,
            seed,
            ..NetworkConfig::default()
        }
        .with_ablation(self.ablation);
        config.channels().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    /// LBAW weights file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Input image (.ppm, .pgm or .png; gray inputs are replicated to RGB).
    #[arg(long)]
    pub input: PathBuf,
    /// Output map; PNG for a .png extension, PGM otherwise.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with images/ and masks/ subdirectories paired by stem.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many generated rectangle images instead of --data.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Seeds the initialization and the synthetic images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = TOY_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    /// Output LBAW weights file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Target to check; may be repeated. Without --op every target runs.
    #[arg(long)]
    pub op: Vec<String>,
    /// Check every registered target.
    #[arg(long)]
    pub all: bool,
    /// First input seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds per target.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Eval(a) => crate::eval::run(&a),
        Command::Forward(a) => crate::forward::run(&a),
        Command::TrainToy(a) => crate::train_toy::run(&a),
        Command::Gradcheck(a) => crate::gradcheck::run(&a),
    }
}
