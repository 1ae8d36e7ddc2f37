use serde::{Deserialize, Serialize};

use super::params::support_mask;
use super::{LayerConfig, LayerParams, ModelError, ModelParams};
use crate::sequence::FeatureSequence;
use crate::skeleton::SkeletonGraph;

/// `A + I` of a skeleton as sparse rows.
#[derive(Debug, Clone)]
pub struct PreparedSkeleton {
    pub(crate) n: usize,
    /// Per row, `(column, (A + I) value)` for every non-zero entry.
    pub(crate) rows: Vec<Vec<(usize, f64)>>,
    pub(crate) mask: Vec<f64>,
}

impl PreparedSkeleton {
    pub fn new(skeleton: &SkeletonGraph) -> Self {
        let n = skeleton.n_joints();
        let raw = skeleton.raw_adjacency();
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let v = if i == j { raw[(i, j)] + 1.0 } else { raw[(i, j)] };
                        (v > 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            n,
            rows,
            mask: support_mask(skeleton),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.n
    }
}

/// Importance-modulated normalized adjacency of one layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerAdjacency {
    /// `M = (A + I) * Q` on the support, aligned with `PreparedSkeleton::rows`.
    pub(crate) modulated: Vec<Vec<f64>>,
    /// `d^{-1/2}` of the row sums of `M`, zero where the row sum is not positive.
    pub(crate) inv_sqrt_degree: Vec<f64>,
    /// `D^{-1/2} M D^{-1/2}`, aligned like `modulated`.
    pub(crate) values: Vec<Vec<f64>>,
}

impl LayerAdjacency {
    pub(crate) fn new(sk: &PreparedSkeleton, importance: &[f64]) -> Self {
        let n = sk.n;
        let modulated: Vec<Vec<f64>> = sk
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, a)| a * importance[i * n + j]).collect())
            .collect();
        let inv_sqrt_degree: Vec<f64> = modulated
            .iter()
            .map(|row| {
                let d: f64 = row.iter().sum();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let values = sk
            .rows
            .iter()
            .zip(&modulated)
            .enumerate()
            .map(|(i, (row, m))| {
                row.iter()
                    .zip(m)
                    .map(|(&(j, _), &mv)| inv_sqrt_degree[i] * mv * inv_sqrt_degree[j])
                    .collect()
            })
            .collect();
        Self {
            modulated,
            inv_sqrt_degree,
            values,
        }
    }
}

/// `channels x joints x frames` values, time-major, valid frames only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub joints: usize,
    /// Valid frames held in `data`.
    pub frames: usize,
    /// Frame count of the zero-padded sequence this map stands for.
    pub padded: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, joints: usize, frames: usize, padded: usize) -> Self {
        Self {
            channels,
            joints,
            frames,
            padded,
            data: vec![0.0; channels * joints * frames],
        }
    }

    pub fn from_sequence(seq: &FeatureSequence, channels: usize, joints: usize) -> Result<Self, ModelError> {
        if seq.dim() != channels * joints {
            return Err(ModelError::ShapeMismatch(format!(
                "sequence {} has frame dimension {}, expected {channels} x {joints}",
                seq.id,
                seq.dim()
            )));
        }
        Ok(Self {
            channels,
            joints,
            frames: seq.valid_length(),
            padded: seq.padded_length(),
            data: seq.valid_frames().concat(),
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.channels * self.joints
    }

    pub fn index(&self, c: usize, n: usize, t: usize) -> usize {
        (t * self.channels + c) * self.joints + n
    }

    pub fn get(&self, c: usize, n: usize, t: usize) -> f64 {
        self.data[self.index(c, n, t)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let d = self.frame_dim();
        &self.data[t * d..(t + 1) * d]
    }

    /// Zero-padded sequence with this map's valid frames.
    pub fn to_sequence(&self, id: &str, label: usize) -> FeatureSequence {
        let frames: Vec<Vec<f64>> = (0..self.frames).map(|t| self.frame(t).to_vec()).collect();
        FeatureSequence::from_valid(id, label, frames, self.padded)
            .expect("feature maps are finite with at least one frame")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Post-ReLU map of every layer; empty unless maps were retained.
    pub maps: Vec<FeatureMap>,
    pub pooled: Vec<f64>,
    /// Pre-softmax class scores.
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Values kept from one layer for reverse mode.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub(crate) adjacency: LayerAdjacency,
    /// Temporal convolution output, `in_channels` per joint.
    pub(crate) conv: Vec<f64>,
    /// After channel mixing, `out_channels` per joint.
    pub(crate) mixed: Vec<f64>,
    pub(crate) output: FeatureMap,
}

pub(crate) fn temporal_conv(cfg: &LayerConfig, kernel: &[f64], x: &FeatureMap) -> (Vec<f64>, usize) {
    let (c_in, n, tau, stride) = (cfg.in_channels, x.joints, cfg.temporal_kernel, cfg.temporal_stride);
    let pad = tau / 2;
    let t_out = cfg.output_length(x.frames);
    let d = c_in * n;
    let mut y = vec![0.0; t_out * d];
    for t in 0..t_out {
        let out = &mut y[t * d..(t + 1) * d];
        for s in 0..tau {
            let Some(src) = (t * stride + s).checked_sub(pad).filter(|&u| u < x.frames) else {
                continue;
            };
            let inp = x.frame(src);
            for c in 0..c_in {
                let k = kernel[c * tau + s];
                for (o, v) in out[c * n..(c + 1) * n].iter_mut().zip(&inp[c * n..(c + 1) * n]) {
                    *o += k * v;
                }
            }
        }
    }
    (y, t_out)
}

/// Per frame, `P[o, m] = sum_c W[c, o] Y[c, m]`.
pub(crate) fn channel_mix(cfg: &LayerConfig, weight: &[f64], y: &[f64], n: usize, frames: usize) -> Vec<f64> {
    let (c_in, c_out) = (cfg.in_channels, cfg.out_channels);
    let mut p = vec![0.0; frames * c_out * n];
    for t in 0..frames {
        let yt = &y[t * c_in * n..(t + 1) * c_in * n];
        let pt = &mut p[t * c_out * n..(t + 1) * c_out * n];
        for c in 0..c_in {
            let yc = &yt[c * n..(c + 1) * n];
            for o in 0..c_out {
                let w = weight[c * c_out + o];
                if w == 0.0 {
                    continue;
                }
                for (dst, v) in pt[o * n..(o + 1) * n].iter_mut().zip(yc) {
                    *dst += w * v;
                }
            }
        }
    }
    p
}

pub(crate) fn layer_forward(
    cfg: &LayerConfig,
    params: &LayerParams,
    sk: &PreparedSkeleton,
    x: &FeatureMap,
) -> LayerCache {
    let n = sk.n;
    let adjacency = LayerAdjacency::new(sk, &params.importance);
    let (conv, frames) = temporal_conv(cfg, &params.temporal, x);
    let mixed = channel_mix(cfg, &params.weight, &conv, n, frames);
    let c_out = cfg.out_channels;
    let mut output = FeatureMap::zeros(c_out, n, frames, cfg.output_length(x.padded));
    for t in 0..frames {
        let base = t * c_out * n;
        for o in 0..c_out {
            let pm = &mixed[base + o * n..base + (o + 1) * n];
            for (i, (row, vals)) in sk.rows.iter().zip(&adjacency.values).enumerate() {
                let mut z = 0.0;
                for (&(j, _), &a) in row.iter().zip(vals) {
                    z += a * pm[j];
                }
                output.data[base + o * n + i] = z.max(0.0);
            }
        }
    }
    LayerCache {
        adjacency,
        conv,
        mixed,
        output,
    }
}

/// Global average pool over joints and valid frames.
pub(crate) fn pool(map: &FeatureMap) -> Vec<f64> {
    let mut pooled = vec![0.0; map.channels];
    for t in 0..map.frames {
        let f = map.frame(t);
        for (c, p) in pooled.iter_mut().enumerate() {
            *p += f[c * map.joints..(c + 1) * map.joints].iter().sum::<f64>();
        }
    }
    let count = (map.joints * map.frames) as f64;
    pooled.iter_mut().for_each(|p| *p /= count);
    pooled
}

pub(crate) fn head(params: &ModelParams, pooled: &[f64]) -> Vec<f64> {
    let k = params.config.n_classes;
    let mut logits = params.head_bias.clone();
    for (c, &p) in pooled.iter().enumerate() {
        for (l, w) in logits.iter_mut().zip(&params.head_weight[c * k..(c + 1) * k]) {
            *l += p * w;
        }
    }
    logits
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub(crate) fn check_model(params: &ModelParams, sk: &PreparedSkeleton) -> Result<(), ModelError> {
    if params.config.n_joints != sk.n {
        return Err(ModelError::ShapeMismatch(format!(
            "model has {} joints, skeleton has {}",
            params.config.n_joints, sk.n
        )));
    }
    if params.layers.len() != params.config.layers.len() {
        return Err(ModelError::ShapeMismatch("layer parameters do not match config".into()));
    }
    Ok(())
}

pub(crate) fn input_map(params: &ModelParams, input: &FeatureSequence) -> Result<FeatureMap, ModelError> {
    let cfg = &params.config;
    let needed = cfg.layers[0].temporal_kernel;
    if input.valid_length() < needed {
        return Err(ModelError::SequenceTooShort {
            id: input.id.clone(),
            valid: input.valid_length(),
            needed,
        });
    }
    FeatureMap::from_sequence(input, cfg.in_channels, cfg.n_joints)
}

/// Runs layers `from..` on `x`, the input of layer `from` (0-based).
pub(crate) fn forward_layers(
    params: &ModelParams,
    sk: &PreparedSkeleton,
    from: usize,
    x: &FeatureMap,
) -> Vec<LayerCache> {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(params.layers.len() - from);
    for l in from..params.layers.len() {
        let input = caches.last().map_or(x, |c| &c.output);
        let cache = layer_forward(&params.config.layers[l], &params.layers[l], sk, input);
        caches.push(cache);
    }
    caches
}

pub(crate) fn forward_cached(
    params: &ModelParams,
    sk: &PreparedSkeleton,
    input: &FeatureSequence,
) -> Result<(FeatureMap, Vec<LayerCache>), ModelError> {
    check_model(params, sk)?;
    let x = input_map(params, input)?;
    let caches = forward_layers(params, sk, 0, &x);
    Ok((x, caches))
}

pub(crate) fn trace_from(params: &ModelParams, caches: Vec<LayerCache>, retain: bool) -> ForwardTrace {
    let last = &caches.last().expect("models have at least one layer").output;
    let pooled = pool(last);
    let logits = head(params, &pooled);
    let probabilities = softmax(&logits);
    let maps = if retain {
        caches.into_iter().map(|c| c.output).collect()
    } else {
        Vec::new()
    };
    ForwardTrace {
        maps,
        pooled,
        logits,
        probabilities,
    }
}

pub fn forward(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    input: &FeatureSequence,
    retain: bool,
) -> Result<ForwardTrace, ModelError> {
    let sk = PreparedSkeleton::new(skeleton);
    let (_, caches) = forward_cached(params, &sk, input)?;
    Ok(trace_from(params, caches, retain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stgcn::ModelConfig;

    fn single_joint() -> SkeletonGraph {
        SkeletonGraph::new(1, Vec::new(), None).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let sk = crate::skeleton::builtin_skeleton_25();
        let cfg = ModelConfig::toy(3, 25, 4);
        let params = ModelParams::zeros(&cfg);
        let seq = FeatureSequence::from_valid("s", 0, vec![vec![0.5; 75]; 6], 8).unwrap();
        let tr = forward(&params, &sk, &seq, true).unwrap();
        assert_eq!(tr.logits, vec![0.0; 4]);
        assert!(tr.probabilities.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert_eq!(tr.maps.len(), 4);
    }

    #[test]
    fn identity_layer_is_relu() {
        let cfg = ModelConfig::from_widths(2, 1, 1, &[2], 1, &[]);
        let mut params = ModelParams::zeros(&cfg);
        params.layers[0].temporal = vec![1.0, 1.0];
        params.layers[0].weight = vec![1.0, 0.0, 0.0, 1.0];
        params.layers[0].importance = vec![1.0];
        let frames = vec![vec![1.0, -2.0], vec![-0.5, 3.0], vec![0.0, 0.25]];
        let seq = FeatureSequence::from_valid("s", 0, frames.clone(), 4).unwrap();
        let tr = forward(&params, &single_joint(), &seq, true).unwrap();
        let relu: Vec<f64> = frames.concat().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(tr.maps[0].data, relu);
        assert_eq!(tr.maps[0].padded, 4);
    }

    #[test]
    fn rejects_short_and_misshaped_input() {
        let sk = crate::skeleton::builtin_skeleton_25();
        let params = ModelParams::zeros(&ModelConfig::toy(3, 25, 2));
        let short = FeatureSequence::from_valid("s", 0, vec![vec![0.0; 75]; 2], 4).unwrap();
        assert!(matches!(
            forward(&params, &sk, &short, false),
            Err(ModelError::SequenceTooShort { .. })
        ));
        let wide = FeatureSequence::from_valid("s", 0, vec![vec![0.0; 50]; 4], 4).unwrap();
        assert!(matches!(
            forward(&params, &sk, &wide, false),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn strided_lengths() {
        let sk = crate::skeleton::builtin_skeleton_25();
        let cfg = ModelConfig::from_widths(3, 25, 2, &[4, 4], 3, &[2, 2]);
        let params = ModelParams::init(&cfg, &sk, 1).unwrap();
        let seq = FeatureSequence::from_valid("s", 0, vec![vec![0.1; 75]; 9], 12).unwrap();
        let tr = forward(&params, &sk, &seq, true).unwrap();
        assert_eq!((tr.maps[0].frames, tr.maps[0].padded), (5, 6));
        assert_eq!((tr.maps[1].frames, tr.maps[1].padded), (3, 3));
        assert!(tr.maps.iter().all(|m| m.data.iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
