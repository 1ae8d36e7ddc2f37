use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{argmax, loss_gradients};
use super::forward::{forward_cached, head, pool, PreparedSkeleton};
use super::{ModelConfig, ModelError, ModelParams};
use crate::rng::{stream_rng, Stream};
use crate::sequence::FeatureSequence;
use crate::skeleton::SkeletonGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Rescale each batch gradient to at most this global norm; 0 disables.
    #[serde(default)]
    pub clip_norm: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch: 8,
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

/// Mean loss and accuracy accumulated over one pass through the data, each
/// sample scored with the parameters current when its batch was processed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// First 1-based epoch whose accuracy reaches `target`.
    pub fn epochs_to_accuracy(&self, target: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.accuracy >= target).map(|e| e.epoch)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

fn check_labels(params: &ModelParams, dataset: &[FeatureSequence]) -> Result<(), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n_classes = params.config.n_classes;
    match dataset.iter().find(|s| s.label >= n_classes) {
        Some(s) => Err(ModelError::BadClass {
            class: s.label,
            n_classes,
        }),
        None => Ok(()),
    }
}

/// SGD with momentum on mean batch cross-entropy. Layers below
/// `freeze_below` are left untouched.
fn sgd(
    mut params: ModelParams,
    skeleton: &SkeletonGraph,
    dataset: &[FeatureSequence],
    freeze_below: usize,
    hyper: &Hyper,
) -> Result<TrainOutcome, ModelError> {
    check_labels(&params, dataset)?;
    let layers = params.layers.len();
    if freeze_below > layers {
        return Err(ModelError::BadLayerIndex {
            layer: freeze_below,
            layers,
        });
    }
    let sk = PreparedSkeleton::new(skeleton);
    let mut velocity = params.zeros_like();
    let mut rng = stream_rng(hyper.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch = hyper.batch.max(1);
    let frozen_tensors = 3 * freeze_below;
    let mut history = TrainHistory::default();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            let results = chunk
                .par_iter()
                .map(|&i| loss_gradients(&params, &sk, &dataset[i]))
                .collect::<Result<Vec<_>, _>>()?;
            // Summed in sample order so the result is independent of scheduling.
            let mut grad = params.zeros_like();
            for (loss, ok, g) in &results {
                loss_sum += loss;
                correct += usize::from(*ok);
                grad.axpy(1.0, g);
            }
            let mut inv = 1.0 / chunk.len() as f64;
            if hyper.clip_norm > 0.0 {
                let norm = inv * trainable_norm(&grad, frozen_tensors);
                if norm > hyper.clip_norm {
                    inv *= hyper.clip_norm / norm;
                }
            }
            let grads = grad
                .tensors()
                .into_iter()
                .map(|(_, _, t)| t.to_vec())
                .collect::<Vec<_>>();
            for (k, ((p, v), g)) in params
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .zip(grads)
                .enumerate()
            {
                if k < frozen_tensors {
                    continue;
                }
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = hyper.momentum * *vi + gi * inv;
                    *pi -= hyper.lr * *vi;
                }
            }
            clamp_unfrozen(&mut params, &sk.mask, freeze_below);
        }
        let loss = loss_sum / dataset.len() as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(ModelError::DivergenceDetected { epoch });
        }
        history.epochs.push(EpochStats {
            epoch,
            loss,
            accuracy: correct as f64 / dataset.len() as f64,
        });
    }
    Ok(TrainOutcome { params, history })
}

fn trainable_norm(grad: &ModelParams, frozen_tensors: usize) -> f64 {
    grad.tensors()
        .iter()
        .skip(frozen_tensors)
        .flat_map(|(_, _, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn clamp_unfrozen(params: &mut ModelParams, mask: &[f64], freeze_below: usize) {
    let frozen: Vec<_> = params.layers.drain(..freeze_below).collect();
    params.clamp_importance(mask);
    params.layers.splice(0..0, frozen);
}

/// Trains a freshly initialized model (init stream of `hyper.seed`).
pub fn train(
    dataset: &[FeatureSequence],
    skeleton: &SkeletonGraph,
    config: &ModelConfig,
    hyper: &Hyper,
) -> Result<TrainOutcome, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let params = ModelParams::init(config, skeleton, hyper.seed)?;
    sgd(params, skeleton, dataset, 0, hyper)
}

/// Continues training `params` with layers `0..freeze_below` frozen.
pub fn finetune(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    dataset: &[FeatureSequence],
    freeze_below: usize,
    hyper: &Hyper,
) -> Result<TrainOutcome, ModelError> {
    sgd(params.clone(), skeleton, dataset, freeze_below, hyper)
}

/// Predicted class of every sequence.
pub fn predict(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    dataset: &[FeatureSequence],
) -> Result<Vec<usize>, ModelError> {
    let sk = PreparedSkeleton::new(skeleton);
    dataset
        .par_iter()
        .map(|s| {
            let (_, caches) = forward_cached(params, &sk, s)?;
            Ok(argmax(&head(params, &pool(&caches.last().expect("non-empty").output))))
        })
        .collect()
}

/// Fraction of sequences classified correctly.
pub fn evaluate(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    dataset: &[FeatureSequence],
) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let pred = predict(params, skeleton, dataset)?;
    let hits = pred.iter().zip(dataset).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Post-ReLU maps of every layer as zero-padded sequences, outer index the
/// layer. Ids and labels are carried over from the inputs.
pub fn extract_embeddings(
    params: &ModelParams,
    skeleton: &SkeletonGraph,
    dataset: &[FeatureSequence],
) -> Result<Vec<Vec<FeatureSequence>>, ModelError> {
    let sk = PreparedSkeleton::new(skeleton);
    let per_sample = dataset
        .par_iter()
        .map(|s| {
            let (_, caches) = forward_cached(params, &sk, s)?;
            Ok(caches
                .into_iter()
                .map(|c| c.output.to_sequence(&s.id, s.label))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut layers: Vec<Vec<FeatureSequence>> = (0..params.layers.len())
        .map(|_| Vec::with_capacity(dataset.len()))
        .collect();
    for sample in per_sample {
        for (l, seq) in sample.into_iter().enumerate() {
            layers[l].push(seq);
        }
    }
    Ok(layers)
}
