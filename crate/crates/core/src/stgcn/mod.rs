//! A small spatiotemporal graph convolutional network with hand-written
//! reverse mode.
//!
//! Each layer applies a depthwise temporal convolution, mixes channels with
//! `W`, propagates over the skeleton with the importance-modulated adjacency
//! `D_q^{-1/2} ((A + I) * Q) D_q^{-1/2}` and ends in a ReLU. A global average
//! pool and a linear head produce class scores.
//!
//! Feature maps are stored time-major: frame `t` holds `channels x joints`
//! values with the channel index outermost, the same layout as
//! [`FeatureSequence`](crate::sequence::FeatureSequence) frames. Only valid
//! frames are ever computed; anything past a sequence's valid length is zero.

mod backward;
mod config;
mod forward;
mod params;
mod train;

use thiserror::Error;

pub use backward::{class_score_gradients, feature_map_score, loss_gradients, GradTrace};
pub use config::{LayerConfig, ModelConfig};
pub use forward::{forward, FeatureMap, ForwardTrace, PreparedSkeleton};
pub use params::{LayerParams, ModelParams, IMPORTANCE_FLOOR};
pub use train::{
    evaluate, extract_embeddings, finetune, predict, train, EpochStats, Hyper, TrainHistory, TrainOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence {id} has {valid} valid frames, first layer needs at least {needed}")]
    SequenceTooShort { id: String, valid: usize, needed: usize },
    #[error("class {class} out of range ({n_classes} classes)")]
    BadClass { class: usize, n_classes: usize },
    #[error("layer {layer} out of range ({layers} layers)")]
    BadLayerIndex { layer: usize, layers: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
}
