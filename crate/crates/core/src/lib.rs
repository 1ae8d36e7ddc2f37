//! Spatiotemporal graph networks and the geometry of their layer embeddings.
//!
//! The crate trains a small STGCN on skeleton sequences, measures how class
//! labels spread over dataset graphs built from each layer's embeddings, and
//! explains predictions with layerwise Grad-CAM heatmaps.

pub mod dsgraph;
pub mod dtw;
pub mod gradcam;
pub mod linalg;
pub mod rng;
pub mod sequence;
pub mod skeleton;
pub mod stgcn;
pub mod synth;

pub use dsgraph::{
    knn_graph, label_smoothness, laplacian, nnk_graph, smoothness_profile, DatasetGraph, GraphError, GraphMethod,
    LabelSignal, SmoothnessReport,
};
pub use dtw::{dtw_distance, fit_window_weights, kernel_matrix, wdtw, DtwError, WindowWeights};
pub use gradcam::{heatmap_stack, HeatmapStack, Normalization};
pub use linalg::{nnls_solve, spectral_norm, sym_eig, DenseMatrix, LinalgError, NnlsSolution, SymEig};
pub use sequence::{FeatureSequence, SequenceError};
pub use skeleton::{builtin_skeleton_25, SkeletonError, SkeletonGraph};
pub use stgcn::{ModelConfig, ModelError, ModelParams};
pub use synth::{add_awgn_psnr, generate_dataset, NoiseSpec, SynthConfig, SynthError};
