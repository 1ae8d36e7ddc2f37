//! The pipeline steps behind each subcommand, usable without the binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stgg_core::dsgraph::{layer_kernels, profile_from_kernels, GraphMethod, SmoothnessReport};
use stgg_core::gradcam::{aggregate_stacks, heatmap_csv, heatmap_stack, HeatmapExport, HeatmapStack, Normalization};
use stgg_core::linalg::spectral_norm;
use stgg_core::sequence::FeatureSequence;
use stgg_core::skeleton::SkeletonGraph;
use stgg_core::stgcn::{extract_embeddings, finetune, train, Hyper, ModelConfig, ModelParams, TrainHistory};
use stgg_core::synth::{self, add_awgn_dataset, generate_dataset, SynthConfig};

use crate::checkpoint;
use crate::error::{input, runtime, CliError, Result};
use crate::manifest::{write_dataset, Dataset, ManifestMeta};

pub const CHECKPOINT_FILE: &str = "checkpoint.stgc";
pub const LOSS_FILE: &str = "loss.csv";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime(dir.display()))?;
    }
    fs::write(path, contents).map_err(runtime(path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn csv_string<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(runtime("csv"))?;
    }
    let bytes = w.into_inner().map_err(runtime("csv"))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = fs::read_to_string(path).map_err(input(path.display()))?;
    let cfg: SynthConfig = serde_json::from_str(&text).map_err(input(path.display()))?;
    cfg.validate().map_err(input(path.display()))?;
    Ok(cfg)
}

/// Generates the dataset described by `cfg` into `out`.
pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<PathBuf> {
    let skeleton = cfg.validate().map_err(input("synth config"))?;
    let (data, _) = generate_dataset(cfg).map_err(input("synth config"))?;
    let meta = ManifestMeta {
        t_pad: cfg.padded_length(),
        dim: cfg.channels * skeleton.n_joints(),
        classes: cfg.class_names(),
        skeleton: cfg.skeleton.clone(),
        groups: Vec::new(),
    };
    write_dataset(out, &data, meta)
}

/// Model shape for a dataset: a named preset or a JSON config file.
pub fn model_config(dataset: &Dataset, preset: &str, config_file: Option<&Path>) -> Result<ModelConfig> {
    let channels = dataset.channels()?;
    let joints = dataset.skeleton.n_joints();
    let classes = dataset.manifest.classes.len();
    let cfg = match config_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(input(path.display()))?;
            serde_json::from_str::<ModelConfig>(&text).map_err(input(path.display()))?
        }
        None => ModelConfig::preset(preset, channels, joints, classes)
            .ok_or_else(|| CliError::Input(format!("unknown model preset {preset:?} (expected toy or paper)")))?,
    };
    cfg.validate().map_err(input("model config"))?;
    check_compatible(&cfg, dataset)?;
    Ok(cfg)
}

fn check_compatible(cfg: &ModelConfig, dataset: &Dataset) -> Result<()> {
    let channels = dataset.channels()?;
    let joints = dataset.skeleton.n_joints();
    if cfg.in_channels != channels || cfg.n_joints != joints {
        return Err(CliError::Input(format!(
            "model expects {} channels on {} joints, dataset has {} on {}",
            cfg.in_channels, cfg.n_joints, channels, joints
        )));
    }
    Ok(())
}

fn check_classes(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    check_compatible(&params.config, dataset)?;
    let (model, data) = (params.config.n_classes, dataset.manifest.classes.len());
    if model != data {
        return Err(CliError::Input(format!(
            "model has {model} classes, dataset has {data}"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

pub fn loss_csv(history: &TrainHistory) -> Result<String> {
    csv_string(history.epochs.iter().map(|e| LossRow {
        epoch: e.epoch,
        loss: e.loss,
        accuracy: e.accuracy,
    }))
}

fn write_training(out: &Path, params: &ModelParams, history: &TrainHistory) -> Result<()> {
    fs::create_dir_all(out).map_err(runtime(out.display()))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, params).map_err(runtime(ckpt.display()))?;
    write_file(&out.join(LOSS_FILE), loss_csv(history)?)
}

/// Trains from a fresh initialization and writes `checkpoint.stgc` and
/// `loss.csv` into `out`.
pub fn train_cmd(
    dataset: &Dataset,
    config: &ModelConfig,
    hyper: &Hyper,
    out: &Path,
) -> Result<(ModelParams, TrainHistory)> {
    check_compatible(config, dataset)?;
    if config.n_classes != dataset.manifest.classes.len() {
        return Err(CliError::Input(format!(
            "model has {} classes, dataset has {}",
            config.n_classes,
            dataset.manifest.classes.len()
        )));
    }
    let outcome = train(&dataset.sequences, &dataset.skeleton, config, hyper).map_err(model_error)?;
    write_training(out, &outcome.params, &outcome.history)?;
    Ok((outcome.params, outcome.history))
}

/// How many graph layers stay fixed during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freeze {
    Below(usize),
    /// Every graph layer; only the classifier trains.
    All,
}

impl std::str::FromStr for Freeze {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Freeze::All);
        }
        s.parse()
            .map(Freeze::Below)
            .map_err(|_| format!("expected a layer count or \"all\", got {s:?}"))
    }
}

/// Continues training `params`. The classifier is replaced (seeded by
/// `hyper.seed`) when `reset_head` is set or the class count changed.
pub fn finetune_cmd(
    dataset: &Dataset,
    params: &ModelParams,
    freeze: Freeze,
    reset_head: bool,
    hyper: &Hyper,
    out: &Path,
) -> Result<(ModelParams, TrainHistory)> {
    check_compatible(&params.config, dataset)?;
    let layers = params.config.layer_count();
    let freeze_below = match freeze {
        Freeze::All => layers,
        Freeze::Below(n) if n <= layers => n,
        Freeze::Below(n) => {
            return Err(CliError::Input(format!(
                "cannot freeze {n} layers of a {layers}-layer model"
            )));
        }
    };
    let classes = dataset.manifest.classes.len();
    let start = if reset_head || params.config.n_classes != classes {
        params.with_new_head(classes, hyper.seed)
    } else {
        params.clone()
    };
    let outcome = finetune(&start, &dataset.skeleton, &dataset.sequences, freeze_below, hyper).map_err(model_error)?;
    write_training(out, &outcome.params, &outcome.history)?;
    Ok((outcome.params, outcome.history))
}

fn model_error(e: stgg_core::stgcn::ModelError) -> CliError {
    use stgg_core::stgcn::ModelError as M;
    match e {
        M::DivergenceDetected { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

/// Smoothness report plus the squared spectral norm of every layer's
/// channel-mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    #[serde(flatten)]
    pub report: SmoothnessReport,
    pub weight_norm_sq: Vec<f64>,
}

/// One report per method, all sharing a single set of layer kernels.
pub fn smoothness_reports(
    dataset: &Dataset,
    params: &ModelParams,
    methods: &[GraphMethod],
    k: usize,
    windows: usize,
) -> Result<Vec<SmoothnessSummary>> {
    check_classes(params, dataset)?;
    let n = dataset.sequences.len();
    if k == 0 || k >= n {
        return Err(CliError::Input(format!("k = {k} needs 1 <= k < {n} samples")));
    }
    if windows == 0 {
        return Err(CliError::Input("windows must be positive".into()));
    }
    let embeddings = extract_embeddings(params, &dataset.skeleton, &dataset.sequences).map_err(model_error)?;
    let kernels = layer_kernels(&embeddings, windows).map_err(runtime("kernels"))?;
    let norms = weight_norms(params)?;
    methods
        .iter()
        .map(|&m| {
            let report = profile_from_kernels(&kernels, &dataset.labels, m, k, windows, &dataset.manifest.groups)
                .map_err(runtime(m))?;
            Ok(SmoothnessSummary {
                report,
                weight_norm_sq: norms.clone(),
            })
        })
        .collect()
}

pub fn weight_norms(params: &ModelParams) -> Result<Vec<f64>> {
    (0..params.config.layer_count())
        .map(|l| {
            spectral_norm(&params.weight_matrix(l))
                .map(|s| s * s)
                .map_err(runtime(format!("layer {}", l + 1)))
        })
        .collect()
}

#[derive(Serialize)]
struct SmoothnessRow {
    layer: usize,
    class: usize,
    raw: f64,
    normalized: f64,
}

/// Long-format CSV: `layer,class,raw,normalized`.
pub fn smoothness_csv(report: &SmoothnessReport) -> Result<String> {
    csv_string(report.layers.iter().flat_map(|l| {
        l.classes.iter().map(move |c| SmoothnessRow {
            layer: l.layer,
            class: c.class,
            raw: c.raw,
            normalized: c.normalized,
        })
    }))
}

/// Writes `smoothness_<method>.csv` and `.json` into `out`.
pub fn write_smoothness(summary: &SmoothnessSummary, out: &Path) -> Result<[PathBuf; 2]> {
    let stem = format!("smoothness_{}", summary.report.method);
    let csv_path = out.join(format!("{stem}.csv"));
    let json_path = out.join(format!("{stem}.json"));
    write_file(&csv_path, smoothness_csv(&summary.report)?)?;
    write_file(&json_path, to_json(summary))?;
    Ok([csv_path, json_path])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GradcamTarget {
    Sample(String),
    /// Mean of the per-sample maps over every sample labelled with the class.
    ClassAggregate,
}

/// Joint subsets by name, or a comma-separated list of indices.
pub fn parse_joints(spec: &str, n_joints: usize) -> std::result::Result<Vec<usize>, String> {
    let named: Option<&[usize]> = match spec {
        "right_arm" => Some(&synth::RIGHT_ARM),
        "left_arm" => Some(&synth::LEFT_ARM),
        "legs" => Some(&synth::LEGS),
        "left_leg" => Some(&synth::LEFT_LEG),
        "right_leg" => Some(&synth::RIGHT_LEG),
        "head" => Some(&synth::HEAD),
        _ => None,
    };
    let joints = match named {
        Some(j) => j.to_vec(),
        None if spec == "all" => (0..n_joints).collect(),
        None => spec
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad joint {t:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()?,
    };
    match joints.iter().find(|&&j| j >= n_joints) {
        Some(j) => Err(format!("joint {j} out of range for {n_joints} joints")),
        None => Ok(joints),
    }
}

pub fn gradcam_cmd(
    dataset: &Dataset,
    params: &ModelParams,
    class: usize,
    target: &GradcamTarget,
    normalization: Normalization,
    joints: &[usize],
) -> Result<HeatmapStack> {
    check_classes(params, dataset)?;
    if class >= params.config.n_classes {
        return Err(CliError::Input(format!(
            "class {class} out of range ({} classes)",
            params.config.n_classes
        )));
    }
    let stack = |s: &FeatureSequence| {
        heatmap_stack(params, &dataset.skeleton, s, class, normalization, joints).map_err(model_error)
    };
    match target {
        GradcamTarget::Sample(id) => {
            let i = dataset
                .find(id)
                .ok_or_else(|| CliError::Input(format!("no sample with id {id:?}")))?;
            stack(&dataset.sequences[i])
        }
        GradcamTarget::ClassAggregate => {
            let stacks = dataset
                .sequences
                .iter()
                .filter(|s| s.label == class)
                .map(stack)
                .collect::<Result<Vec<_>>>()?;
            aggregate_stacks(&stacks).ok_or_else(|| CliError::Input(format!("no samples of class {class}")))
        }
    }
}

#[derive(Serialize)]
struct ConcentrationRow {
    layer: usize,
    share: f64,
}

/// Writes `heatmap.json` and `heatmap.csv`, plus `concentration.csv`
/// (`layer,share`) when a joint subset was given.
pub fn write_gradcam(stack: &HeatmapStack, joints: &[usize], out: &Path) -> Result<()> {
    write_file(&out.join("heatmap.json"), to_json(&HeatmapExport::from(stack)))?;
    write_file(&out.join("heatmap.csv"), heatmap_csv(&stack.layers))?;
    if !joints.is_empty() {
        let rows = stack
            .concentration
            .iter()
            .enumerate()
            .map(|(l, &share)| ConcentrationRow { layer: l + 1, share });
        write_file(&out.join("concentration.csv"), csv_string(rows)?)?;
    }
    Ok(())
}

/// Directory name for one noise level: `psnr_20`, `psnr_12.5`, `psnr_inf`.
pub fn psnr_dir_name(psnr: f64) -> String {
    if psnr == f64::INFINITY {
        "psnr_inf".into()
    } else {
        format!("psnr_{psnr}")
    }
}

/// Writes one noisy copy of the dataset per PSNR level under `out`.
pub fn noise_cmd(dataset: &Dataset, psnrs: &[f64], seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    psnrs
        .iter()
        .map(|&p| {
            let noisy = add_awgn_dataset(&dataset.sequences, p, seed).map_err(input(format!("psnr {p}")))?;
            write_dataset(&out.join(psnr_dir_name(p)), &noisy, ManifestMeta::of(dataset))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub mean_energy: f64,
}

/// Eigenvalues of the skeleton's normalized adjacency, ascending, with the
/// channel-summed graph-frequency energy averaged over the dataset.
pub fn spectrum_cmd(dataset: &Dataset, skeleton: &SkeletonGraph) -> Result<Vec<SpectrumRow>> {
    let spectrum = skeleton.spectrum().map_err(runtime("spectrum"))?;
    let n = skeleton.n_joints();
    let mut mean = vec![0.0; n];
    for s in &dataset.sequences {
        let e = spectrum.energy_all_channels(s).map_err(input(&s.id))?;
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v / dataset.sequences.len() as f64;
        }
    }
    Ok(spectrum
        .eigenvalues()
        .iter()
        .zip(mean)
        .enumerate()
        .map(|(index, (&eigenvalue, mean_energy))| SpectrumRow {
            index,
            eigenvalue,
            mean_energy,
        })
        .collect())
}

pub fn write_spectrum(rows: &[SpectrumRow], path: &Path) -> Result<()> {
    write_file(path, csv_string(rows)?)
}
