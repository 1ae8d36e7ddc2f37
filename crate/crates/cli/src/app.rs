//! Argument parsing and dispatch for the `stgg` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stgg_core::dsgraph::GraphMethod;
use stgg_core::gradcam::Normalization;
use stgg_core::skeleton::SkeletonGraph;
use stgg_core::stgcn::Hyper;
use stgg_core::synth::SynthConfig;

use crate::checkpoint;
use crate::commands::{self, Freeze, GradcamTarget};
use crate::error::{input, CliError, Result};
use crate::manifest::{load_dataset, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "stgg",
    version,
    about = "Skeleton action graphs: train, probe and explain a small STGCN"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training a checkpoint with early layers frozen.
    Finetune(FinetuneArgs),
    /// Label smoothness of every layer's dataset graph.
    Smoothness(SmoothnessArgs),
    /// Layerwise Grad-CAM heatmaps.
    Gradcam(GradcamArgs),
    /// Noisy copies of a dataset at fixed PSNR levels.
    Noise(NoiseArgs),
    /// Graph-frequency energy of a dataset on the skeleton.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synth config; overrides the preset flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in class set: three_class or transfer.
    #[arg(long, default_value = "three_class")]
    pub preset: String,
    #[arg(long, default_value_t = 200)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory for manifest.json and samples/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = Hyper::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = Hyper::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = Hyper::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = Hyper::default().batch)]
    pub batch: usize,
    /// Seeds initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Global gradient norm cap per batch; 0 disables.
    #[arg(long, default_value_t = Hyper::default().clip_norm)]
    pub clip_norm: f64,
}

impl HyperArgs {
    fn hyper(&self) -> Result<Hyper> {
        let h = Hyper {
            lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            clip_norm: self.clip_norm,
        };
        let ok = h.lr.is_finite()
            && h.lr >= 0.0
            && (0.0..1.0).contains(&h.momentum)
            && h.batch > 0
            && h.clip_norm.is_finite()
            && h.clip_norm >= 0.0;
        if !ok {
            return Err(CliError::Input(
                "need lr >= 0, 0 <= momentum < 1, batch > 0 and clip-norm >= 0".into(),
            ));
        }
        Ok(h)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model preset: toy or paper.
    #[arg(long, default_value = "toy")]
    pub model: String,
    /// JSON model config; overrides --model.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of leading graph layers to freeze, or "all".
    #[arg(long, default_value = "all")]
    pub freeze_below: Freeze,
    /// Start from a fresh classifier even if the class count is unchanged.
    #[arg(long)]
    pub reset_head: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SmoothnessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "nnk")]
    pub method: GraphMethod,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Number of DTW windows.
    #[arg(long, default_value_t = 5)]
    pub windows: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class whose score is explained.
    #[arg(long)]
    pub class: usize,
    /// Explain a single sample.
    #[arg(long, conflicts_with = "aggregate", required_unless_present = "aggregate")]
    pub sample: Option<String>,
    /// Average over every sample of the class.
    #[arg(long)]
    pub aggregate: bool,
    /// per_layer_max or cross_layer.
    #[arg(long, default_value = "per_layer_max")]
    pub normalization: Normalization,
    /// Joint subset for the concentration report: a named set
    /// (legs, right_arm, left_arm, left_leg, right_leg, head, all) or indices.
    #[arg(long)]
    pub joints: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// PSNR levels in dB, comma separated; "inf" leaves a copy unchanged.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 20.0, 30.0])]
    pub psnr: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Skeleton JSON; defaults to the manifest's skeleton.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Caps the rayon pool from `STGG_THREADS` (unset or 0 = one per core).
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("STGG_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("STGG_THREADS must be a non-negative integer, got {value:?}")))?;
    if n > 0 {
        // A pool built earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    if let Some(path) = &args.config {
        return commands::load_synth_config(path);
    }
    match args.preset.as_str() {
        "three_class" => Ok(SynthConfig::three_class(args.samples_per_class, args.seed)),
        "transfer" => Ok(SynthConfig::transfer_classes(args.samples_per_class, args.seed)),
        other => Err(CliError::Input(format!(
            "unknown preset {other:?} (expected three_class or transfer)"
        ))),
    }
}

fn load_checkpoint(path: &Path) -> Result<stgg_core::stgcn::ModelParams> {
    checkpoint::load(path).map_err(input(path.display()))
}

pub fn execute(command: Command) -> Result<()> {
    configure_threads()?;
    match command {
        Command::Synth(a) => {
            let path = commands::synth(&synth_config(&a)?, &a.out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train(a) => {
            let data = load_dataset(&a.manifest)?;
            let cfg = commands::model_config(&data, &a.model, a.model_config.as_deref())?;
            let (_, history) = commands::train_cmd(&data, &cfg, &a.hyper.hyper()?, &a.out)?;
            report_history(&history, &a.out);
        }
        Command::Finetune(a) => {
            let data = load_dataset(&a.manifest)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let (_, history) =
                commands::finetune_cmd(&data, &params, a.freeze_below, a.reset_head, &a.hyper.hyper()?, &a.out)?;
            report_history(&history, &a.out);
        }
        Command::Smoothness(a) => {
            let data = load_dataset(&a.manifest)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let summaries = commands::smoothness_reports(&data, &params, &[a.method], a.k, a.windows)?;
            for s in &summaries {
                let [csv, _] = commands::write_smoothness(s, &a.out)?;
                eprintln!("wrote {}", csv.display());
            }
        }
        Command::Gradcam(a) => {
            let data = load_dataset(&a.manifest)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let joints = match &a.joints {
                Some(spec) => commands::parse_joints(spec, data.skeleton.n_joints()).map_err(CliError::Input)?,
                None => Vec::new(),
            };
            let target = match a.sample {
                Some(id) => GradcamTarget::Sample(id),
                None => GradcamTarget::ClassAggregate,
            };
            let stack = commands::gradcam_cmd(&data, &params, a.class, &target, a.normalization, &joints)?;
            commands::write_gradcam(&stack, &joints, &a.out)?;
            eprintln!("wrote {} layers to {}", stack.layers.len(), a.out.display());
        }
        Command::Noise(a) => {
            let data = load_dataset(&a.manifest)?;
            for path in commands::noise_cmd(&data, &a.psnr, a.seed, &a.out)? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Spectrum(a) => {
            let data = load_dataset(&a.manifest)?;
            let skeleton = match &a.skeleton {
                Some(path) => SkeletonGraph::load(path).map_err(input(path.display()))?,
                None => data.skeleton.clone(),
            };
            let rows = commands::spectrum_cmd(&data, &skeleton)?;
            commands::write_spectrum(&rows, &a.out)?;
        }
    }
    Ok(())
}

fn report_history(history: &stgg_core::stgcn::TrainHistory, out: &Path) {
    if let Some(last) = history.epochs.last() {
        eprintln!(
            "epoch {}: loss {:.4}, accuracy {:.3}; wrote {}",
            last.epoch,
            last.loss,
            last.accuracy,
            out.join(commands::CHECKPOINT_FILE).display()
        );
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Manifest path inside a dataset directory written by `synth` or `noise`.
pub fn manifest_in(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
