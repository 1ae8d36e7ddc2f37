//! Dataset manifests: a JSON index over one `STGT` file per sample.
//!
//! ```json
//! {"t_pad": 36, "dim": 75, "classes": ["wave", "kick"],
//!  "samples": [{"id": "s0", "label": 0, "valid_length": 30, "file": "samples/00000.stgt"}]}
//! ```
//!
//! Sample files are `t_pad x dim` tensors, relative paths resolve against the
//! manifest's directory. Two optional keys extend the format: `skeleton`
//! (an inline skeleton description, default the built-in 25-joint layout)
//! and `groups` (named class subsets averaged in smoothness reports).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stgg_core::dsgraph::{ClassGroup, LabelSignal};
use stgg_core::sequence::FeatureSequence;
use stgg_core::skeleton::{builtin_skeleton_25, SkeletonFile, SkeletonGraph};

use crate::error::{input, runtime, CliError, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub label: usize,
    pub valid_length: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub t_pad: usize,
    pub dim: usize,
    pub samples: Vec<SampleEntry>,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<ClassGroup>,
}

/// A manifest with all of its samples loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<FeatureSequence>,
    pub labels: LabelSignal,
    pub skeleton: SkeletonGraph,
}

impl Dataset {
    pub fn channels(&self) -> Result<usize> {
        let n = self.skeleton.n_joints();
        if n == 0 || self.manifest.dim % n != 0 {
            return Err(CliError::Input(format!(
                "frame dim {} is not a multiple of {} joints",
                self.manifest.dim, n
            )));
        }
        Ok(self.manifest.dim / n)
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.sequences.iter().position(|s| s.id == id)
    }
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(input(path.display()))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(input(path.display()))?;
    let mut seen = HashSet::new();
    for s in &m.samples {
        if !seen.insert(s.id.as_str()) {
            return Err(CliError::Input(format!("duplicate sample id {:?}", s.id)));
        }
        if s.label >= m.classes.len() {
            return Err(CliError::Input(format!(
                "sample {:?} has label {} but only {} classes are listed",
                s.id,
                s.label,
                m.classes.len()
            )));
        }
    }
    Ok(m)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let sequences = manifest
        .samples
        .iter()
        .map(|s| {
            let file = base.join(&s.file);
            let t = Tensor::load(&file).map_err(input(file.display()))?;
            if t.dims != [manifest.t_pad, manifest.dim] {
                return Err(CliError::Input(format!(
                    "{}: shape {:?}, manifest says [{}, {}]",
                    file.display(),
                    t.dims,
                    manifest.t_pad,
                    manifest.dim
                )));
            }
            let rows = t.rows().expect("two dimensions");
            FeatureSequence::new(s.id.clone(), s.label, rows, s.valid_length).map_err(input(file.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = LabelSignal::new(
        sequences.iter().map(|s| s.label).collect(),
        manifest.classes.len().max(1),
    )
    .map_err(input(path.display()))?;
    let skeleton = match &manifest.skeleton {
        None => builtin_skeleton_25(),
        Some(f) => SkeletonGraph::from_file(f.clone()).map_err(input("manifest skeleton"))?,
    };
    let dataset = Dataset {
        manifest,
        sequences,
        labels,
        skeleton,
    };
    dataset.channels()?;
    Ok(dataset)
}

/// What to write alongside the samples.
#[derive(Debug, Clone, Default)]
pub struct ManifestMeta {
    pub t_pad: usize,
    pub dim: usize,
    pub classes: Vec<String>,
    pub skeleton: Option<SkeletonFile>,
    pub groups: Vec<ClassGroup>,
}

impl ManifestMeta {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            t_pad: dataset.manifest.t_pad,
            dim: dataset.manifest.dim,
            classes: dataset.manifest.classes.clone(),
            skeleton: dataset.manifest.skeleton.clone(),
            groups: dataset.manifest.groups.clone(),
        }
    }
}

/// Writes `dir/manifest.json` and `dir/samples/NNNNN.stgt`, returning the
/// manifest path.
pub fn write_dataset(dir: &Path, sequences: &[FeatureSequence], meta: ManifestMeta) -> Result<PathBuf> {
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(runtime(samples_dir.display()))?;
    let mut samples = Vec::with_capacity(sequences.len());
    for (i, s) in sequences.iter().enumerate() {
        if s.padded_length() != meta.t_pad || s.dim() != meta.dim {
            return Err(CliError::Runtime(format!(
                "sequence {} is {}x{}, dataset is {}x{}",
                s.id,
                s.padded_length(),
                s.dim(),
                meta.t_pad,
                meta.dim
            )));
        }
        let file = format!("samples/{i:05}.stgt");
        let path = dir.join(&file);
        Tensor::from_sequence(s).save(&path).map_err(runtime(path.display()))?;
        samples.push(SampleEntry {
            id: s.id.clone(),
            label: s.label,
            valid_length: s.valid_length(),
            file,
        });
    }
    let manifest = DatasetManifest {
        t_pad: meta.t_pad,
        dim: meta.dim,
        samples,
        classes: meta.classes,
        skeleton: meta.skeleton,
        groups: meta.groups,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(runtime(path.display()))?;
    Ok(path)
}
