use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::linalg::DenseMatrix;
use crate::rng::{stream_rng, Stream};
use crate::skeleton::SkeletonGraph;

/// Lower bound kept on learned edge importances so degrees stay positive.
pub const IMPORTANCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Depthwise temporal kernel, `in_channels x tau`.
    pub temporal: Vec<f64>,
    /// Channel mixing, `in_channels x out_channels`.
    pub weight: Vec<f64>,
    /// Edge importance `Q`, `joints x joints`; zero off the `A + I` support.
    pub importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    /// `final_channels x n_classes`.
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

fn xavier(rng: &mut impl Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

/// `1` where `A + I` is non-zero.
pub(crate) fn support_mask(skeleton: &SkeletonGraph) -> Vec<f64> {
    let raw = skeleton.raw_adjacency();
    let n = skeleton.n_joints();
    let mut mask = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || raw[(i, j)] > 0.0 {
                mask[i * n + j] = 1.0;
            }
        }
    }
    mask
}

impl ModelParams {
    /// Xavier-uniform weights from the init stream of `seed`, unit edge
    /// importances and a zero head bias.
    pub fn init(config: &ModelConfig, skeleton: &SkeletonGraph, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if skeleton.n_joints() != config.n_joints {
            return Err(ModelError::ShapeMismatch(format!(
                "config has {} joints, skeleton has {}",
                config.n_joints,
                skeleton.n_joints()
            )));
        }
        let mut rng = stream_rng(seed, Stream::ParamInit);
        let mask = support_mask(skeleton);
        let layers = config
            .layers
            .iter()
            .map(|l| {
                let tau = l.temporal_kernel;
                LayerParams {
                    temporal: xavier(&mut rng, l.in_channels * tau, tau, tau),
                    weight: xavier(&mut rng, l.in_channels * l.out_channels, l.in_channels, l.out_channels),
                    importance: mask.clone(),
                }
            })
            .collect();
        let mut params = Self {
            config: config.clone(),
            layers,
            head_weight: Vec::new(),
            head_bias: Vec::new(),
        };
        params.reset_head_with(&mut rng, config.n_classes);
        Ok(params)
    }

    /// All tensors zero, including edge importances.
    pub fn zeros(config: &ModelConfig) -> Self {
        let n = config.n_joints;
        let layers = config
            .layers
            .iter()
            .map(|l| LayerParams {
                temporal: vec![0.0; l.in_channels * l.temporal_kernel],
                weight: vec![0.0; l.in_channels * l.out_channels],
                importance: vec![0.0; n * n],
            })
            .collect();
        Self {
            config: config.clone(),
            layers,
            head_weight: vec![0.0; config.final_channels() * config.n_classes],
            head_bias: vec![0.0; config.n_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    fn reset_head_with(&mut self, rng: &mut impl Rng, n_classes: usize) {
        let c = self.config.final_channels();
        self.config.n_classes = n_classes;
        self.head_weight = xavier(rng, c * n_classes, c, n_classes);
        self.head_bias = vec![0.0; n_classes];
    }

    /// Replaces the classifier with a freshly initialized one for `n_classes`.
    pub fn with_new_head(&self, n_classes: usize, seed: u64) -> Self {
        let mut out = self.clone();
        out.reset_head_with(&mut stream_rng(seed, Stream::HeadInit), n_classes);
        out
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let n = self.config.n_joints;
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for (l, (p, c)) in self.layers.iter().zip(&self.config.layers).enumerate() {
            out.push((
                format!("layer{}.temporal", l + 1),
                vec![c.in_channels, c.temporal_kernel],
                &p.temporal[..],
            ));
            out.push((
                format!("layer{}.weight", l + 1),
                vec![c.in_channels, c.out_channels],
                &p.weight[..],
            ));
            out.push((format!("layer{}.importance", l + 1), vec![n, n], &p.importance[..]));
        }
        out.push((
            "head.weight".into(),
            vec![self.config.final_channels(), self.config.n_classes],
            &self.head_weight[..],
        ));
        out.push(("head.bias".into(), vec![self.config.n_classes], &self.head_bias[..]));
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(3 * self.layers.len() + 2);
        for p in &mut self.layers {
            out.push(&mut p.temporal);
            out.push(&mut p.weight);
            out.push(&mut p.importance);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Rebuilds parameters from tensors listed as in [`tensors`](Self::tensors).
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = Self::zeros(&config);
        let slots = params.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (k, (slot, t)) in slots.into_iter().zip(tensors).enumerate() {
            if slot.len() != t.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {k} has {} values, expected {}",
                    t.len(),
                    slot.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::ShapeMismatch(format!("tensor {k} is not finite")));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, _, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += a * v;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= a);
        }
    }

    /// Channel-mixing weights of layer `l` (0-based) as a matrix.
    pub fn weight_matrix(&self, l: usize) -> DenseMatrix {
        let c = &self.config.layers[l];
        DenseMatrix::from_vec(c.in_channels, c.out_channels, self.layers[l].weight.clone())
            .expect("weights are finite and sized by the config")
    }

    /// Clamps on-support importances to at least [`IMPORTANCE_FLOOR`].
    pub(crate) fn clamp_importance(&mut self, mask: &[f64]) {
        for p in &mut self.layers {
            for (q, &m) in p.importance.iter_mut().zip(mask) {
                if m > 0.0 && *q < IMPORTANCE_FLOOR {
                    *q = IMPORTANCE_FLOOR;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::builtin_skeleton_25;

    #[test]
    fn init_is_deterministic_and_masked() {
        let sk = builtin_skeleton_25();
        let cfg = ModelConfig::toy(3, 25, 4);
        let a = ModelParams::init(&cfg, &sk, 11).unwrap();
        let b = ModelParams::init(&cfg, &sk, 11).unwrap();
        let c = ModelParams::init(&cfg, &sk, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let q = &a.layers[0].importance;
        assert_eq!(q.iter().filter(|v| **v == 1.0).count(), 25 + 2 * 24);
        assert!(a.head_bias.iter().all(|v| *v == 0.0));
        let bound = (6.0f64 / 11.0).sqrt();
        assert!(a.layers[0].weight.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn tensor_round_trip() {
        let sk = builtin_skeleton_25();
        let cfg = ModelConfig::toy(3, 25, 2);
        let a = ModelParams::init(&cfg, &sk, 0).unwrap();
        let tensors = a.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        assert_eq!(ModelParams::from_tensors(cfg, tensors).unwrap(), a);
    }

    #[test]
    fn new_head_keeps_body() {
        let sk = builtin_skeleton_25();
        let a = ModelParams::init(&ModelConfig::toy(3, 25, 2), &sk, 0).unwrap();
        let b = a.with_new_head(5, 9);
        assert_eq!(a.layers, b.layers);
        assert_eq!(b.head_bias.len(), 5);
        assert_eq!(b.head_weight.len(), 16 * 5);
    }
}
