//! Dataset graphs over whole sequences (KNN and NNK), their Laplacian, and
//! label smoothness of class indicators across network layers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtw::{fit_window_weights, kernel_matrix, DtwError};
use crate::linalg::{nnls_solve, sym_eig, DenseMatrix, LinalgError, NnlsSolution, DEFAULT_NNLS_TOL};
use crate::sequence::FeatureSequence;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_PRUNE_TOL: f64 = 1e-8;
/// Added on top of `-lambda_min` when lifting a kernel block to positive definite.
pub const PD_MARGIN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    BadK { k: usize, n: usize },
    #[error("kernel matrix must be square, got {rows}x{cols}")]
    NonSquareKernel { rows: usize, cols: usize },
    #[error("NNLS failed at node {node}: {source}")]
    SolverFailure { node: usize, source: LinalgError },
    #[error("class {class} out of range ({n_classes} classes)")]
    BadClass { class: usize, n_classes: usize },
    #[error("{labels} labels for {nodes} nodes")]
    LabelCount { labels: usize, nodes: usize },
    #[error("label {label} not below class count {n_classes}")]
    BadLabel { label: usize, n_classes: usize },
    #[error("layer {layer}: {reason}")]
    LayerInconsistency { layer: usize, reason: String },
    #[error(transparent)]
    Dtw(#[from] DtwError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMethod {
    Knn,
    Nnk,
}

impl fmt::Display for GraphMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMethod::Knn => "knn",
            GraphMethod::Nnk => "nnk",
        })
    }
}

impl FromStr for GraphMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knn" => Ok(GraphMethod::Knn),
            "nnk" => Ok(GraphMethod::Nnk),
            other => Err(format!("unknown graph method {other:?} (expected knn or nnk)")),
        }
    }
}

/// Undirected weighted graph over dataset items. Edges are keyed `(i, j)`
/// with `i < j`; weights are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetGraph {
    pub n: usize,
    pub method: GraphMethod,
    pub k: usize,
    edges: BTreeMap<(usize, usize), f64>,
}

impl DatasetGraph {
    pub fn empty(n: usize, method: GraphMethod, k: usize) -> Self {
        Self {
            n,
            method,
            k,
            edges: BTreeMap::new(),
        }
    }

    /// Builds a graph by averaging directed weights per unordered pair; an
    /// absent direction counts as zero. Non-positive results are dropped.
    pub fn from_directed(n: usize, method: GraphMethod, k: usize, directed: &[Vec<(usize, f64)>]) -> Self {
        let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, out) in directed.iter().enumerate() {
            for &(j, w) in out {
                if i == j {
                    continue;
                }
                *sums.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
            }
        }
        let edges = sums
            .into_iter()
            .map(|(key, s)| (key, 0.5 * s))
            .filter(|(_, w)| *w > 0.0 && w.is_finite())
            .collect();
        Self { n, method, k, edges }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges `(i, j, w)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges()
            .filter_map(|(a, b, _)| match (a == i, b == i) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}

/// JSON export: `{"n":…, "method":…, "edges":[[i,j,w],…]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphExport {
    pub n: usize,
    pub method: GraphMethod,
    pub edges: Vec<(usize, usize, f64)>,
}

impl From<&DatasetGraph> for GraphExport {
    fn from(g: &DatasetGraph) -> Self {
        Self {
            n: g.n,
            method: g.method,
            edges: g.edges().collect(),
        }
    }
}

fn check_kernel(kernel: &DenseMatrix, k: usize) -> Result<usize, GraphError> {
    if !kernel.is_square() {
        return Err(GraphError::NonSquareKernel {
            rows: kernel.rows(),
            cols: kernel.cols(),
        });
    }
    let n = kernel.rows();
    if k == 0 || k >= n {
        return Err(GraphError::BadK { k, n });
    }
    Ok(n)
}

/// The `k` most similar other nodes of `i`, ties to the lower index.
pub fn nearest_candidates(kernel: &DenseMatrix, i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..kernel.rows()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| kernel[(i, b)].total_cmp(&kernel[(i, a)]).then(a.cmp(&b)));
    others.truncate(k);
    others
}

pub fn knn_graph(kernel: &DenseMatrix, k: usize) -> Result<DatasetGraph, GraphError> {
    let n = check_kernel(kernel, k)?;
    let directed: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            nearest_candidates(kernel, i, k)
                .into_iter()
                .map(|j| (j, kernel[(i, j)]))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect();
    Ok(DatasetGraph::from_directed(n, GraphMethod::Knn, k, &directed))
}

/// One node's NNK subproblem and its solution.
#[derive(Debug, Clone)]
pub struct NnkNeighborhood {
    pub node: usize,
    /// KNN candidate set, most similar first.
    pub candidates: Vec<usize>,
    /// Diagonal lift applied to the candidate block.
    pub shift: f64,
    pub gram: DenseMatrix,
    pub target: Vec<f64>,
    pub solution: NnlsSolution,
}

impl NnkNeighborhood {
    /// Candidates kept after pruning, with their weights.
    pub fn support(&self, tol: f64) -> Vec<(usize, f64)> {
        self.candidates
            .iter()
            .zip(&self.solution.theta)
            .filter(|(_, &t)| t > tol)
            .map(|(&j, &t)| (j, t))
            .collect()
    }
}

/// Solves `min_{theta >= 0} 1/2 theta' (K_SS + eps I) theta - K_Si' theta`
/// over each node's KNN candidates, `eps = max(0, -lambda_min(K_SS)) + 1e-8`.
pub fn nnk_neighborhoods(kernel: &DenseMatrix, k: usize) -> Result<Vec<NnkNeighborhood>, GraphError> {
    let n = check_kernel(kernel, k)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let candidates = nearest_candidates(kernel, i, k);
            let mut gram = kernel.submatrix(&candidates);
            // Rounding in the kernel can leave the block asymmetric at the
            // last bit; the eigensolver only needs it symmetric within tolerance.
            let lambda_min = sym_eig(&gram)
                .map_err(|source| GraphError::SolverFailure { node: i, source })?
                .min_value()
                .unwrap_or(0.0);
            let shift = (-lambda_min).max(0.0) + PD_MARGIN;
            for d in 0..candidates.len() {
                gram[(d, d)] += shift;
            }
            let target: Vec<f64> = candidates.iter().map(|&j| kernel[(i, j)]).collect();
            let solution = nnls_solve(&gram, &target, DEFAULT_NNLS_TOL)
                .map_err(|source| GraphError::SolverFailure { node: i, source })?;
            Ok(NnkNeighborhood {
                node: i,
                candidates,
                shift,
                gram,
                target,
                solution,
            })
        })
        .collect()
}

pub fn nnk_graph(kernel: &DenseMatrix, k: usize, tol: f64) -> Result<DatasetGraph, GraphError> {
    let hoods = nnk_neighborhoods(kernel, k)?;
    let directed: Vec<Vec<(usize, f64)>> = hoods.iter().map(|h| h.support(tol)).collect();
    Ok(DatasetGraph::from_directed(
        kernel.rows(),
        GraphMethod::Nnk,
        k,
        &directed,
    ))
}

pub fn build_graph(kernel: &DenseMatrix, method: GraphMethod, k: usize) -> Result<DatasetGraph, GraphError> {
    match method {
        GraphMethod::Knn => knn_graph(kernel, k),
        GraphMethod::Nnk => nnk_graph(kernel, k, DEFAULT_PRUNE_TOL),
    }
}

/// Combinatorial Laplacian `Deg - W`.
pub fn laplacian(g: &DatasetGraph) -> DenseMatrix {
    let mut l = DenseMatrix::zeros(g.n, g.n);
    for (i, j, w) in g.edges() {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

/// Class index per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSignal {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelSignal {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self, GraphError> {
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(GraphError::BadLabel { label, n_classes });
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-vs-rest indicator of `class`.
    pub fn indicator(&self, class: usize) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// `y' L y` for an arbitrary real node signal, evaluated over edges.
pub fn laplacian_quadratic(g: &DatasetGraph, y: &[f64]) -> f64 {
    g.edges()
        .map(|(i, j, w)| {
            let d = y[i] - y[j];
            w * d * d
        })
        .sum()
}

/// Raw and total-weight-normalized smoothness of the class-`class` indicator.
pub fn label_smoothness(g: &DatasetGraph, y: &LabelSignal, class: usize) -> Result<(f64, f64), GraphError> {
    if class >= y.n_classes() {
        return Err(GraphError::BadClass {
            class,
            n_classes: y.n_classes(),
        });
    }
    if y.len() != g.n {
        return Err(GraphError::LabelCount {
            labels: y.len(),
            nodes: g.n,
        });
    }
    let raw = laplacian_quadratic(g, &y.indicator(class));
    let total = g.total_weight();
    let normalized = if total > 0.0 { raw / total } else { 0.0 };
    Ok((raw, normalized))
}

/// Named subset of classes averaged together in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub name: String,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSmoothness {
    pub class: usize,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSmoothness {
    pub name: String,
    pub mean_raw: f64,
    pub mean_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSmoothness {
    /// 1-based layer index.
    pub layer: usize,
    pub classes: Vec<ClassSmoothness>,
    pub mean_raw: f64,
    pub mean_normalized: f64,
    pub edge_count: usize,
    pub total_weight: f64,
    pub groups: Vec<GroupSmoothness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub method: GraphMethod,
    pub k: usize,
    pub windows: usize,
    pub layers: Vec<LayerSmoothness>,
}

impl SmoothnessReport {
    pub fn mean_raw_per_layer(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.mean_raw).collect()
    }
}

pub fn layer_smoothness(
    layer: usize,
    g: &DatasetGraph,
    y: &LabelSignal,
    groups: &[ClassGroup],
) -> Result<LayerSmoothness, GraphError> {
    let classes = (0..y.n_classes())
        .map(|c| {
            label_smoothness(g, y, c).map(|(raw, normalized)| ClassSmoothness {
                class: c,
                raw,
                normalized,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = |f: &dyn Fn(&ClassSmoothness) -> f64, idx: &[usize]| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().map(|&c| f(&classes[c])).sum::<f64>() / idx.len() as f64
        }
    };
    let all: Vec<usize> = (0..y.n_classes()).collect();
    let groups = groups
        .iter()
        .map(|grp| {
            if let Some(&class) = grp.classes.iter().find(|&&c| c >= y.n_classes()) {
                return Err(GraphError::BadClass {
                    class,
                    n_classes: y.n_classes(),
                });
            }
            Ok(GroupSmoothness {
                name: grp.name.clone(),
                mean_raw: mean(&|c| c.raw, &grp.classes),
                mean_normalized: mean(&|c| c.normalized, &grp.classes),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LayerSmoothness {
        layer,
        mean_raw: mean(&|c| c.raw, &all),
        mean_normalized: mean(&|c| c.normalized, &all),
        edge_count: g.edge_count(),
        total_weight: g.total_weight(),
        classes,
        groups,
    })
}

fn check_layers(embeddings: &[Vec<FeatureSequence>], y: &LabelSignal) -> Result<(), GraphError> {
    let Some(first) = embeddings.first() else {
        return Ok(());
    };
    for (l, layer) in embeddings.iter().enumerate() {
        if layer.len() != y.len() {
            return Err(GraphError::LayerInconsistency {
                layer: l + 1,
                reason: format!("{} sequences for {} labels", layer.len(), y.len()),
            });
        }
        if let Some((a, b)) = layer.iter().zip(first).find(|(a, b)| a.id != b.id) {
            return Err(GraphError::LayerInconsistency {
                layer: l + 1,
                reason: format!("sequence {} where {} was expected", a.id, b.id),
            });
        }
    }
    Ok(())
}

/// Per-layer wDTW kernels, each with window weights fitted on that layer.
pub fn layer_kernels(embeddings: &[Vec<FeatureSequence>], windows: usize) -> Result<Vec<DenseMatrix>, GraphError> {
    embeddings
        .iter()
        .map(|layer| {
            let w = fit_window_weights(layer, windows)?;
            Ok(kernel_matrix(layer, &w)?)
        })
        .collect()
}

pub fn profile_from_kernels(
    kernels: &[DenseMatrix],
    y: &LabelSignal,
    method: GraphMethod,
    k: usize,
    windows: usize,
    groups: &[ClassGroup],
) -> Result<SmoothnessReport, GraphError> {
    let layers = kernels
        .iter()
        .enumerate()
        .map(|(l, kernel)| {
            let g = build_graph(kernel, method, k)?;
            layer_smoothness(l + 1, &g, y, groups)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SmoothnessReport {
        method,
        k,
        windows,
        layers,
    })
}

/// Label smoothness of every layer's dataset graph.
pub fn smoothness_profile(
    embeddings: &[Vec<FeatureSequence>],
    y: &LabelSignal,
    method: GraphMethod,
    k: usize,
    windows: usize,
    groups: &[ClassGroup],
) -> Result<SmoothnessReport, GraphError> {
    check_layers(embeddings, y)?;
    let kernels = layer_kernels(embeddings, windows)?;
    profile_from_kernels(&kernels, y, method, k, windows, groups)
}
