use serde::{Deserialize, Serialize};

use super::forward::{
    forward_cached, forward_layers, head, pool, softmax, trace_from, FeatureMap, ForwardTrace, LayerCache,
    PreparedSkeleton,
};
use super::{LayerParams, ModelError, ModelParams};
use crate::sequence::FeatureSequence;
use crate::skeleton::SkeletonGraph;

/// Gradients of one class score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradTrace {
    pub class: usize,
    /// `d y^c / d F^l`, shaped like the corresponding forward map.
    pub feature_grads: Vec<FeatureMap>,
    /// Parameter gradients in the parameter layout.
    pub params: ModelParams,
    /// The forward pass the gradients were taken at, maps retained.
    pub trace: ForwardTrace,
}

/// Reverse pass through one layer. Accumulates parameter gradients into
/// `grad` and returns the gradient with respect to the layer input.
fn layer_backward(
    params: &ModelParams,
    l: usize,
    sk: &PreparedSkeleton,
    x: &FeatureMap,
    cache: &LayerCache,
    d_out: &FeatureMap,
    grad: &mut LayerParams,
) -> FeatureMap {
    let cfg = &params.config.layers[l];
    let p = &params.layers[l];
    let (c_in, c_out, tau, stride) = (
        cfg.in_channels,
        cfg.out_channels,
        cfg.temporal_kernel,
        cfg.temporal_stride,
    );
    let n = sk.n;
    let frames = cache.output.frames;
    let adj = &cache.adjacency;

    // Through the ReLU, the adjacency product and the channel mix.
    let mut d_adj: Vec<Vec<f64>> = adj.values.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut d_mixed = vec![0.0; frames * c_out * n];
    for t in 0..frames {
        let base = t * c_out * n;
        for o in 0..c_out {
            let off = base + o * n;
            for (i, (row, vals)) in sk.rows.iter().zip(&adj.values).enumerate() {
                if cache.output.data[off + i] <= 0.0 {
                    continue;
                }
                let dz = d_out.data[off + i];
                if dz == 0.0 {
                    continue;
                }
                for (slot, (&(j, _), &a)) in row.iter().zip(vals).enumerate() {
                    d_mixed[off + j] += a * dz;
                    d_adj[i][slot] += dz * cache.mixed[off + j];
                }
            }
        }
    }

    let mut d_conv = vec![0.0; frames * c_in * n];
    for t in 0..frames {
        let yt = &cache.conv[t * c_in * n..(t + 1) * c_in * n];
        let dpt = &d_mixed[t * c_out * n..(t + 1) * c_out * n];
        let dyt = &mut d_conv[t * c_in * n..(t + 1) * c_in * n];
        for c in 0..c_in {
            for o in 0..c_out {
                let dp = &dpt[o * n..(o + 1) * n];
                let yc = &yt[c * n..(c + 1) * n];
                grad.weight[c * c_out + o] += yc.iter().zip(dp).map(|(a, b)| a * b).sum::<f64>();
                let w = p.weight[c * c_out + o];
                for (d, v) in dyt[c * n..(c + 1) * n].iter_mut().zip(dp) {
                    *d += w * v;
                }
            }
        }
    }

    // Temporal convolution.
    let pad = tau / 2;
    let mut d_x = FeatureMap::zeros(x.channels, x.joints, x.frames, x.padded);
    let d = c_in * n;
    for t in 0..frames {
        let dy = &d_conv[t * d..(t + 1) * d];
        for s in 0..tau {
            let Some(src) = (t * stride + s).checked_sub(pad).filter(|&u| u < x.frames) else {
                continue;
            };
            let inp = x.frame(src);
            let dx = &mut d_x.data[src * d..(src + 1) * d];
            for c in 0..c_in {
                let k = p.temporal[c * tau + s];
                let r = c * n..(c + 1) * n;
                grad.temporal[c * tau + s] += inp[r.clone()]
                    .iter()
                    .zip(&dy[r.clone()])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                for (g, v) in dx[r.clone()].iter_mut().zip(&dy[r]) {
                    *g += k * v;
                }
            }
        }
    }

    // Adjacency entries `r_i M_ij r_j` back to `Q`, including the degrees.
    let r = &adj.inv_sqrt_degree;
    let mut d_r = vec![0.0; n];
    for (i, (row, m)) in sk.rows.iter().zip(&adj.modulated).enumerate() {
        for (slot, &(j, _)) in row.iter().enumerate() {
            let g = d_adj[i][slot] * m[slot];
            d_r[i] += g * r[j];
            d_r[j] += g * r[i];
        }
    }
    for (i, row) in sk.rows.iter().enumerate() {
        if r[i] == 0.0 {
            continue;
        }
        let degree_term = -0.5 * r[i] * r[i] * r[i] * d_r[i];
        for (slot, &(j, a)) in row.iter().enumerate() {
            let d_m = d_adj[i][slot] * r[i] * r[j] + degree_term;
            grad.importance[i * n + j] += d_m * a;
        }
    }
    d_x
}

/// Full reverse pass given `d loss / d logits`.
fn backward(
    params: &ModelParams,
    sk: &PreparedSkeleton,
    x: &FeatureMap,
    caches: &[LayerCache],
    d_logits: &[f64],
) -> (ModelParams, Vec<FeatureMap>) {
    let mut grad = params.zeros_like();
    let k = params.config.n_classes;
    let last = &caches.last().expect("models have at least one layer").output;
    let pooled = pool(last);
    grad.head_bias.copy_from_slice(d_logits);
    let mut d_pooled = vec![0.0; pooled.len()];
    for (c, &pc) in pooled.iter().enumerate() {
        for (j, &dl) in d_logits.iter().enumerate() {
            grad.head_weight[c * k + j] = pc * dl;
            d_pooled[c] += params.head_weight[c * k + j] * dl;
        }
    }
    let mut d_map = FeatureMap::zeros(last.channels, last.joints, last.frames, last.padded);
    let count = (last.joints * last.frames) as f64;
    for t in 0..last.frames {
        for (c, dp) in d_pooled.iter().enumerate() {
            for v in 0..last.joints {
                let idx = d_map.index(c, v, t);
                d_map.data[idx] = dp / count;
            }
        }
    }

    let layers = caches.len();
    let mut feature_grads = Vec::with_capacity(layers);
    for l in (0..layers).rev() {
        let input = if l == 0 { x } else { &caches[l - 1].output };
        let d_in = layer_backward(params, l, sk, input, &caches[l], &d_map, &mut grad.layers[l]);
        feature_grads.push(std::mem::replace(&mut d_map, d_in));
    }
    feature_grads.reverse();
    (grad, feature_grads)
}

pub fn class_score_gradients(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    input: &FeatureSequence,
    class: usize,
) -> Result<GradTrace, ModelError> {
    let n_classes = params.config.n_classes;
    if class >= n_classes {
        return Err(ModelError::BadClass { class, n_classes });
    }
    let sk = PreparedSkeleton::new(skeleton);
    let (x, caches) = forward_cached(params, &sk, input)?;
    let mut d_logits = vec![0.0; n_classes];
    d_logits[class] = 1.0;
    let (grads, feature_grads) = backward(params, &sk, &x, &caches, &d_logits);
    Ok(GradTrace {
        class,
        feature_grads,
        params: grads,
        trace: trace_from(params, caches, true),
    })
}

/// Cross-entropy loss of one sample, whether it was classified correctly and
/// the parameter gradient of the loss.
pub fn loss_gradients(
    params: &ModelParams,
    sk: &PreparedSkeleton,
    input: &FeatureSequence,
) -> Result<(f64, bool, ModelParams), ModelError> {
    let n_classes = params.config.n_classes;
    if input.label >= n_classes {
        return Err(ModelError::BadClass {
            class: input.label,
            n_classes,
        });
    }
    let (x, caches) = forward_cached(params, sk, input)?;
    let logits = head(params, &pool(&caches.last().expect("non-empty").output));
    let probs = softmax(&logits);
    let loss = -probs[input.label].max(f64::MIN_POSITIVE).ln();
    let predicted = argmax(&logits);
    let mut d_logits = probs;
    d_logits[input.label] -= 1.0;
    let (grads, _) = backward(params, sk, &x, &caches, &d_logits);
    Ok((loss, predicted == input.label, grads))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Class score obtained by feeding `map` in as the output of layer `layer`
/// (0-based) and running the rest of the network.
pub fn feature_map_score(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    layer: usize,
    map: &FeatureMap,
    class: usize,
) -> Result<f64, ModelError> {
    let layers = params.layers.len();
    if layer >= layers {
        return Err(ModelError::BadLayerIndex { layer, layers });
    }
    let n_classes = params.config.n_classes;
    if class >= n_classes {
        return Err(ModelError::BadClass { class, n_classes });
    }
    let sk = PreparedSkeleton::new(skeleton);
    let caches = forward_layers(params, &sk, layer + 1, map);
    let last = caches.last().map_or(map, |c| &c.output);
    Ok(head(params, &pool(last))[class])
}
