//! Seeded synthetic skeleton actions and PSNR-controlled white noise.
//!
//! A sample is a resting posture (template plus per-sample jitter and a
//! global position) with sinusoidal motion on the class's moving joints
//! along one axis and a slow linear drift of the whole body. Moving joints
//! swing between rest and rest plus the amplitude, `A (1 - cos)/2`, the way a
//! kick or a raised arm leaves and returns to the resting pose. Classes
//! differ only in which joints move and along which axis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsgraph::LabelSignal;
use crate::rng::{indexed_rng, stream_rng, Stream};
use crate::sequence::FeatureSequence;
use crate::skeleton::{builtin_skeleton_25, SkeletonError, SkeletonFile, SkeletonGraph};

/// PSNR values above this are treated as this (noise of order 1e-15 x peak).
pub const MAX_PSNR_DB: f64 = 300.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error("sequence {id} is all zeros; PSNR is undefined")]
    ZeroSignal { id: String },
    #[error("PSNR must be a number or +inf, got {0}")]
    InvalidPsnr(f64),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

/// Resting coordinates (x right, y up, z toward the camera) of the built-in
/// 25-joint layout, in metres relative to the spine base.
pub const TEMPLATE_25: [[f64; 3]; 25] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.3, 0.0],
    [0.0, 0.6, 0.0],
    [0.0, 0.75, 0.02],
    [-0.18, 0.52, 0.0],
    [-0.25, 0.27, 0.0],
    [-0.28, 0.05, 0.02],
    [-0.29, -0.02, 0.03],
    [0.18, 0.52, 0.0],
    [0.25, 0.27, 0.0],
    [0.28, 0.05, 0.02],
    [0.29, -0.02, 0.03],
    [-0.1, -0.02, 0.0],
    [-0.11, -0.42, 0.0],
    [-0.12, -0.8, 0.0],
    [-0.12, -0.85, 0.08],
    [0.1, -0.02, 0.0],
    [0.11, -0.42, 0.0],
    [0.12, -0.8, 0.0],
    [0.12, -0.85, 0.08],
    [0.0, 0.5, 0.0],
    [-0.3, -0.08, 0.04],
    [-0.26, -0.02, 0.06],
    [0.3, -0.08, 0.04],
    [0.26, -0.02, 0.06],
];

/// One action class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub name: String,
    pub joints: Vec<usize>,
    /// Channel the joints oscillate along.
    pub axis: usize,
    /// Frequency band in cycles per frame.
    pub frequency: [f64; 2],
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// `None` selects the built-in 25-joint skeleton.
    #[serde(default)]
    pub skeleton: Option<SkeletonFile>,
    pub classes: Vec<MotionSpec>,
    pub samples_per_class: usize,
    /// Inclusive valid-length range; sequences are padded to the upper end.
    pub length: [usize; 2],
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// Mean global body position per channel.
    #[serde(default)]
    pub position: [f64; 3],
    /// Half-width of the uniform per-sample spread of the global position.
    #[serde(default)]
    pub position_jitter: f64,
    /// Standard deviation of per-joint posture jitter.
    #[serde(default)]
    pub posture_jitter: f64,
    /// Largest whole-body displacement from drift over a sequence.
    #[serde(default)]
    pub drift: f64,
    /// Relative standard deviation of per-joint amplitude.
    #[serde(default)]
    pub amplitude_jitter: f64,
    /// Standard deviation of per-joint phase offsets, radians.
    #[serde(default)]
    pub phase_jitter: f64,
    /// Output units per metre, applied to every coordinate after synthesis.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_channels() -> usize {
    3
}

fn default_scale() -> f64 {
    1.0
}

pub const RIGHT_ARM: [usize; 6] = [8, 9, 10, 11, 23, 24];
pub const LEFT_ARM: [usize; 6] = [4, 5, 6, 7, 21, 22];
pub const LEGS: [usize; 8] = [12, 13, 14, 15, 16, 17, 18, 19];
pub const LEFT_LEG: [usize; 4] = [12, 13, 14, 15];
pub const RIGHT_LEG: [usize; 4] = [16, 17, 18, 19];
pub const HEAD: [usize; 3] = [2, 3, 20];
pub const ALL_JOINTS: [usize; 25] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24,
];

fn motion(name: &str, joints: &[usize], axis: usize, amplitude: f64) -> MotionSpec {
    MotionSpec {
        name: name.into(),
        joints: joints.to_vec(),
        axis,
        frequency: [0.1, 0.125],
        amplitude,
    }
}

impl SynthConfig {
    fn with_classes(classes: Vec<MotionSpec>, samples_per_class: usize, seed: u64) -> Self {
        Self {
            skeleton: None,
            classes,
            samples_per_class,
            length: [24, 36],
            channels: 3,
            seed,
            position: [0.0; 3],
            position_jitter: 0.3,
            posture_jitter: 0.02,
            drift: 0.05,
            amplitude_jitter: 0.2,
            phase_jitter: 0.3,
            scale: 10.0,
        }
    }

    /// Upper-body, lower-body and full-body classes on the built-in skeleton.
    pub fn three_class(samples_per_class: usize, seed: u64) -> Self {
        Self::with_classes(
            vec![
                motion("wave_right_arm", &RIGHT_ARM, 1, 0.5),
                motion("kick_legs", &LEGS, 2, 0.5),
                motion("sway_body", &ALL_JOINTS, 0, 0.3),
            ],
            samples_per_class,
            seed,
        )
    }

    /// Three new classes that reuse the motion axes of [`three_class`](Self::three_class)
    /// on different joints.
    pub fn transfer_classes(samples_per_class: usize, seed: u64) -> Self {
        Self::with_classes(
            vec![
                motion("raise_left_arm", &LEFT_ARM, 1, 0.5),
                motion("kick_right_leg", &RIGHT_LEG, 2, 0.5),
                motion("shake_head", &HEAD, 0, 0.5),
            ],
            samples_per_class,
            seed,
        )
    }

    pub fn skeleton_graph(&self) -> Result<SkeletonGraph, SynthError> {
        match &self.skeleton {
            None => Ok(builtin_skeleton_25()),
            Some(f) => Ok(SkeletonGraph::from_file(f.clone())?),
        }
    }

    pub fn padded_length(&self) -> usize {
        self.length[1]
    }

    pub fn validate(&self) -> Result<SkeletonGraph, SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        let sk = self.skeleton_graph()?;
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if !(1..=3).contains(&self.channels) {
            return bad(format!("channels must be 1..=3, got {}", self.channels));
        }
        let [lo, hi] = self.length;
        if lo < 8 || lo > hi {
            return bad(format!("length range [{lo}, {hi}] must satisfy 8 <= min <= max"));
        }
        for c in &self.classes {
            if c.joints.is_empty() {
                return bad(format!("class {} moves no joints", c.name));
            }
            if let Some(j) = c.joints.iter().find(|&&j| j >= sk.n_joints()) {
                return bad(format!("class {} joint {j} outside 0..{}", c.name, sk.n_joints()));
            }
            if c.axis >= self.channels {
                return bad(format!(
                    "class {} axis {} outside {} channels",
                    c.name, c.axis, self.channels
                ));
            }
            let [f0, f1] = c.frequency;
            if !(0.0 <= f0 && f0 <= f1 && f1 <= 0.125) {
                return bad(format!("class {} frequency band must lie in [0, 0.125]", c.name));
            }
            if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                return bad(format!("class {} amplitude must be non-negative", c.name));
            }
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        let scalars = [
            self.position_jitter,
            self.posture_jitter,
            self.drift,
            self.amplitude_jitter,
            self.phase_jitter,
        ];
        if scalars.iter().any(|v| !v.is_finite() || *v < 0.0) || self.position.iter().any(|v| !v.is_finite()) {
            return bad("jitter, drift and position must be finite and non-negative".into());
        }
        Ok(sk)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

fn template(n_joints: usize, joint: usize, channel: usize) -> f64 {
    if n_joints == TEMPLATE_25.len() {
        TEMPLATE_25[joint][channel]
    } else {
        0.0
    }
}

fn sample(cfg: &SynthConfig, n: usize, class: usize, id: String, rng: &mut ChaCha8Rng) -> FeatureSequence {
    let spec = &cfg.classes[class];
    let ch = cfg.channels;
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let t_len = rng.random_range(cfg.length[0]..=cfg.length[1]);

    let mut rest = vec![0.0; ch * n];
    let offset: Vec<f64> = (0..ch)
        .map(|c| cfg.position[c] + cfg.position_jitter * rng.random_range(-1.0..=1.0))
        .collect();
    for c in 0..ch {
        for j in 0..n {
            rest[c * n + j] = template(n, j, c) + offset[c] + cfg.posture_jitter * gauss.sample(rng);
        }
    }

    let [f0, f1] = spec.frequency;
    let freq = if f1 > f0 { rng.random_range(f0..=f1) } else { f0 };
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let per_joint: Vec<(usize, f64, f64)> = spec
        .joints
        .iter()
        .map(|&j| {
            let amp = spec.amplitude * (1.0 + cfg.amplitude_jitter * gauss.sample(rng));
            (j, amp, phase + cfg.phase_jitter * gauss.sample(rng))
        })
        .collect();

    // Uniform direction scaled to at most `drift` over the whole sequence.
    let dir: Vec<f64> = (0..ch).map(|_| gauss.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let reach = cfg.drift * rng.random_range(0.0..=1.0);
    let drift: Vec<f64> = dir
        .iter()
        .map(|v| if norm > 0.0 { reach * v / norm } else { 0.0 })
        .collect();

    let frames = (0..t_len)
        .map(|t| {
            let s = t as f64 / (t_len - 1) as f64;
            let mut f = rest.clone();
            for c in 0..ch {
                for j in 0..n {
                    f[c * n + j] += drift[c] * s;
                }
            }
            for &(j, amp, ph) in &per_joint {
                let cycle = (std::f64::consts::TAU * freq * t as f64 + ph).cos();
                f[spec.axis * n + j] += amp * 0.5 * (1.0 - cycle);
            }
            f.iter_mut().for_each(|v| *v *= cfg.scale);
            f
        })
        .collect();
    FeatureSequence::from_valid(id, class, frames, cfg.padded_length()).expect("finite synthetic frames")
}

/// Class-major dataset: all samples of class 0, then class 1, and so on.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Vec<FeatureSequence>, LabelSignal), SynthError> {
    let sk = cfg.validate()?;
    let n = sk.n_joints();
    let mut rng = stream_rng(cfg.seed, Stream::Dataset);
    let mut data = Vec::with_capacity(cfg.classes.len() * cfg.samples_per_class);
    for class in 0..cfg.classes.len() {
        for _ in 0..cfg.samples_per_class {
            let id = format!("s{:05}", data.len());
            data.push(sample(cfg, n, class, id, &mut rng));
        }
    }
    let labels = LabelSignal::new(data.iter().map(|s| s.label).collect(), cfg.classes.len())
        .expect("labels come from the class list");
    Ok((data, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub psnr_db: f64,
    pub seed: u64,
}

/// `sigma = peak * 10^(-psnr/20)` with `peak = max |x|` over valid frames.
pub fn noise_sigma(seq: &FeatureSequence, psnr_db: f64) -> Result<f64, SynthError> {
    if psnr_db.is_nan() || psnr_db == f64::NEG_INFINITY {
        return Err(SynthError::InvalidPsnr(psnr_db));
    }
    let peak = seq.valid_frames().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(SynthError::ZeroSignal { id: seq.id.clone() });
    }
    Ok(peak * 10f64.powf(-psnr_db.min(MAX_PSNR_DB) / 20.0))
}

pub fn add_awgn_with_rng(
    seq: &FeatureSequence,
    psnr_db: f64,
    rng: &mut impl Rng,
) -> Result<FeatureSequence, SynthError> {
    let sigma = noise_sigma(seq, psnr_db)?;
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    Ok(seq
        .map_valid(|_, f| f.iter().map(|v| v + normal.sample(rng)).collect())
        .expect("noise keeps frames finite"))
}

/// Adds white Gaussian noise to the valid frames of one sequence.
pub fn add_awgn_psnr(seq: &FeatureSequence, spec: &NoiseSpec) -> Result<FeatureSequence, SynthError> {
    add_awgn_with_rng(seq, spec.psnr_db, &mut stream_rng(spec.seed, Stream::Noise))
}

/// Noisy copy of a dataset; sequence `i` draws from its own stream.
pub fn add_awgn_dataset(data: &[FeatureSequence], psnr_db: f64, seed: u64) -> Result<Vec<FeatureSequence>, SynthError> {
    data.iter()
        .enumerate()
        .map(|(i, s)| add_awgn_with_rng(s, psnr_db, &mut indexed_rng(seed, Stream::Noise, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        let cfg = SynthConfig::three_class(0, 1);
        assert!(generate_dataset(&cfg).unwrap().0.is_empty());
        let cfg = SynthConfig::three_class(4, 1);
        let (a, la) = generate_dataset(&cfg).unwrap();
        let (b, _) = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.class_counts(), vec![4, 4, 4]);
        assert!(a
            .iter()
            .all(|s| s.padded_length() == 36 && (24..=36).contains(&s.valid_length())));
    }

    #[test]
    fn still_joints_move_at_most_by_drift() {
        let mut cfg = SynthConfig::three_class(3, 2);
        cfg.classes.truncate(2);
        let (data, _) = generate_dataset(&cfg).unwrap();
        for s in &data {
            let moving = &cfg.classes[s.label].joints;
            let f0 = &s.frames()[0];
            for f in s.valid_frames() {
                for c in 0..3 {
                    for j in (0..25).filter(|j| !moving.contains(j)) {
                        assert!((f[c * 25 + j] - f0[c * 25 + j]).abs() <= cfg.drift * cfg.scale + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SynthConfig::three_class(1, 0);
        cfg.length = [4, 10];
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::three_class(1, 0);
        cfg.classes[0].joints = vec![];
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::three_class(1, 0);
        cfg.classes[1].joints.push(25);
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = SynthConfig::three_class(1, 0);
        cfg.channels = 4;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn noise_levels() {
        let (data, _) = generate_dataset(&SynthConfig::three_class(1, 3)).unwrap();
        let s = &data[0];
        let clean = add_awgn_psnr(
            s,
            &NoiseSpec {
                psnr_db: f64::INFINITY,
                seed: 0,
            },
        )
        .unwrap();
        for (a, b) in clean.frames().iter().flatten().zip(s.frames().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let peak = s.valid_frames().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(noise_sigma(s, 0.0).unwrap(), peak);
        assert!(noise_sigma(s, f64::NAN).is_err());
        let noisy = add_awgn_psnr(s, &NoiseSpec { psnr_db: 20.0, seed: 0 }).unwrap();
        assert!(noisy.frames()[s.valid_length()..].iter().flatten().all(|v| *v == 0.0));
        let zero = FeatureSequence::from_valid("z", 0, vec![vec![0.0; 3]; 2], 2).unwrap();
        assert!(matches!(noise_sigma(&zero, 10.0), Err(SynthError::ZeroSignal { .. })));
    }
}
