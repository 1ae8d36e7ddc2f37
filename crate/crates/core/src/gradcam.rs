//! Layerwise Grad-CAM over joints and time.
//!
//! Channel weights are class-score gradients averaged over joints and valid
//! frames; a layer's heatmap is the ReLU of the weighted channel sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sequence::FeatureSequence;
use crate::skeleton::SkeletonGraph;
use crate::stgcn::{class_score_gradients, FeatureMap, GradTrace, ModelError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each layer divided by its own maximum.
    #[default]
    PerLayerMax,
    /// Every layer divided by the largest value over all layers.
    CrossLayer,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::PerLayerMax => "per_layer_max",
            Normalization::CrossLayer => "cross_layer",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_layer_max" | "per-layer" => Ok(Normalization::PerLayerMax),
            "cross_layer" | "cross-layer" => Ok(Normalization::CrossLayer),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

fn check_shapes(grad: &FeatureMap, map: &FeatureMap) -> Result<(), ModelError> {
    if (grad.channels, grad.joints, grad.frames) != (map.channels, map.joints, map.frames) {
        return Err(ModelError::ShapeMismatch(format!(
            "gradient {}x{}x{} vs feature map {}x{}x{}",
            grad.channels, grad.joints, grad.frames, map.channels, map.joints, map.frames
        )));
    }
    Ok(())
}

/// `beta_k`: mean of the gradient over joints and frames of channel `k`.
pub fn gradcam_weights(grad: &FeatureMap, map: &FeatureMap) -> Result<Vec<f64>, ModelError> {
    check_shapes(grad, map)?;
    let mut beta = vec![0.0; grad.channels];
    for t in 0..grad.frames {
        let f = grad.frame(t);
        for (k, b) in beta.iter_mut().enumerate() {
            *b += f[k * grad.joints..(k + 1) * grad.joints].iter().sum::<f64>();
        }
    }
    let count = (grad.joints * grad.frames) as f64;
    beta.iter_mut().for_each(|b| *b /= count);
    Ok(beta)
}

/// `max(0, sum_k beta_k F_k)` as a `joints x frames` row-major matrix.
pub fn heatmap_raw(beta: &[f64], map: &FeatureMap) -> Result<Vec<f64>, ModelError> {
    if beta.len() != map.channels {
        return Err(ModelError::ShapeMismatch(format!(
            "{} weights for {} channels",
            beta.len(),
            map.channels
        )));
    }
    let (n, frames) = (map.joints, map.frames);
    let mut h = vec![0.0; n * frames];
    for t in 0..frames {
        let f = map.frame(t);
        for v in 0..n {
            let s: f64 = beta.iter().enumerate().map(|(k, b)| b * f[k * n + v]).sum();
            h[v * frames + t] = s.max(0.0);
        }
    }
    Ok(h)
}

fn max_normalize(values: &mut [f64], max: f64) {
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
}

/// Raw heatmap divided by its maximum; all-zero maps stay zero.
pub fn heatmap(beta: &[f64], map: &FeatureMap) -> Result<Vec<f64>, ModelError> {
    let mut h = heatmap_raw(beta, map)?;
    let max = h.iter().copied().fold(0.0, f64::max);
    max_normalize(&mut h, max);
    Ok(h)
}

/// One layer's importance map, `joints x frames`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeatmap {
    /// 1-based layer index.
    pub layer: usize,
    pub n: usize,
    pub t: usize,
    pub values: Vec<f64>,
}

impl LayerHeatmap {
    pub fn get(&self, joint: usize, time: usize) -> f64 {
        self.values[joint * self.t + time]
    }

    /// Nearest-neighbor resampling to `frames` frames.
    pub fn upsample(&self, frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n * frames];
        if self.t == 0 {
            return out;
        }
        for j in 0..self.n {
            for t in 0..frames {
                let src = (t * self.t / frames).min(self.t - 1);
                out[j * frames + t] = self.get(j, src);
            }
        }
        out
    }

    /// Share of total mass on `joints`; zero for an all-zero map.
    pub fn mass_share(&self, joints: &[usize]) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let on: f64 = joints
            .iter()
            .filter(|&&j| j < self.n)
            .map(|&j| self.values[j * self.t..(j + 1) * self.t].iter().sum::<f64>())
            .sum();
        on / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStack {
    pub class: usize,
    pub normalization: Normalization,
    pub layers: Vec<LayerHeatmap>,
    /// Every layer resampled to the input's valid frames.
    pub upsampled: Vec<LayerHeatmap>,
    /// Per layer, share of mass on the joint subset given by the caller.
    pub concentration: Vec<f64>,
}

/// Normalized heatmaps of every layer from one gradient trace.
pub fn heatmaps_from_trace(
    grads: &GradTrace,
    normalization: Normalization,
    input_frames: usize,
    subset: &[usize],
) -> Result<HeatmapStack, ModelError> {
    let mut layers = grads
        .trace
        .maps
        .iter()
        .zip(&grads.feature_grads)
        .enumerate()
        .map(|(l, (map, grad))| {
            let beta = gradcam_weights(grad, map)?;
            Ok(LayerHeatmap {
                layer: l + 1,
                n: map.joints,
                t: map.frames,
                values: heatmap_raw(&beta, map)?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    match normalization {
        Normalization::PerLayerMax => {
            for h in &mut layers {
                let max = h.values.iter().copied().fold(0.0, f64::max);
                max_normalize(&mut h.values, max);
            }
        }
        Normalization::CrossLayer => {
            let max = layers.iter().flat_map(|h| h.values.iter().copied()).fold(0.0, f64::max);
            for h in &mut layers {
                max_normalize(&mut h.values, max);
            }
        }
    }
    let upsampled = layers
        .iter()
        .map(|h| LayerHeatmap {
            layer: h.layer,
            n: h.n,
            t: input_frames,
            values: h.upsample(input_frames),
        })
        .collect();
    let concentration = layers.iter().map(|h| h.mass_share(subset)).collect();
    Ok(HeatmapStack {
        class: grads.class,
        normalization,
        layers,
        upsampled,
        concentration,
    })
}

/// Forward and reverse pass once, then heatmaps for every layer.
pub fn heatmap_stack(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    input: &FeatureSequence,
    class: usize,
    normalization: Normalization,
    subset: &[usize],
) -> Result<HeatmapStack, ModelError> {
    let grads = class_score_gradients(params, skeleton, input, class)?;
    heatmaps_from_trace(&grads, normalization, input.valid_length(), subset)
}

/// Mean of several stacks, each layer zero-extended to the longest map.
pub fn aggregate_stacks(stacks: &[HeatmapStack]) -> Option<HeatmapStack> {
    let first = stacks.first()?;
    let mean_layers = |pick: &dyn Fn(&HeatmapStack) -> &Vec<LayerHeatmap>| -> Vec<LayerHeatmap> {
        (0..pick(first).len())
            .map(|l| {
                let n = pick(first)[l].n;
                let t = stacks.iter().map(|s| pick(s)[l].t).max().unwrap_or(0);
                let mut values = vec![0.0; n * t];
                for s in stacks {
                    let h = &pick(s)[l];
                    for j in 0..n {
                        for u in 0..h.t {
                            values[j * t + u] += h.get(j, u);
                        }
                    }
                }
                values.iter_mut().for_each(|v| *v /= stacks.len() as f64);
                LayerHeatmap {
                    layer: l + 1,
                    n,
                    t,
                    values,
                }
            })
            .collect()
    };
    let layers = mean_layers(&|s| &s.layers);
    let upsampled = mean_layers(&|s| &s.upsampled);
    let concentration = (0..first.concentration.len())
        .map(|l| stacks.iter().map(|s| s.concentration[l]).sum::<f64>() / stacks.len() as f64)
        .collect();
    Some(HeatmapStack {
        class: first.class,
        normalization: first.normalization,
        layers,
        upsampled,
        concentration,
    })
}

/// JSON export shape: `{"class":…, "layers":[{"layer":…, "n":…, "t":…, "values":[…]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapExport {
    pub class: usize,
    pub layers: Vec<LayerHeatmap>,
}

impl From<&HeatmapStack> for HeatmapExport {
    fn from(s: &HeatmapStack) -> Self {
        Self {
            class: s.class,
            layers: s.layers.clone(),
        }
    }
}

/// Long-format CSV: `layer,joint,time,value`.
pub fn heatmap_csv(layers: &[LayerHeatmap]) -> String {
    let mut out = String::from("layer,joint,time,value\n");
    for h in layers {
        for j in 0..h.n {
            for t in 0..h.t {
                out.push_str(&format!("{},{},{},{}\n", h.layer, j, t, h.get(j, t)));
            }
        }
    }
    out
}
