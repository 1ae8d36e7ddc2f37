//! The fixed skeleton graph, its self-loop normalized adjacency and graph
//! Fourier energy of joint signals.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, sym_eig, DenseMatrix, LinalgError, SymEig};
use crate::sequence::FeatureSequence;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("adjacency is not symmetric")]
    AsymmetricInput,
    #[error("negative edge weight {weight} between {i} and {j}")]
    NegativeWeight { i: usize, j: usize, weight: f64 },
    #[error("edge ({0}, {0}) is a self-loop")]
    SelfLoop(usize),
    #[error("edge ({i}, {j}) references a joint outside 0..{n}")]
    BadJoint { i: usize, j: usize, n: usize },
    #[error("{edges} edges but {weights} weights")]
    WeightCount { edges: usize, weights: usize },
    #[error("sequence has dimension {dim}, not a multiple of {joints} joints")]
    JointCountMismatch { dim: usize, joints: usize },
    #[error("channel {channel} out of range (sequence has {channels})")]
    BadChannel { channel: usize, channels: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("skeleton file: {0}")]
    Io(#[from] std::io::Error),
    #[error("skeleton file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Joint names of the built-in 25-joint layout, in index order.
pub const JOINT_NAMES_25: [&str; 25] = [
    "spine_base",
    "spine_mid",
    "neck",
    "head",
    "shoulder_left",
    "elbow_left",
    "wrist_left",
    "hand_left",
    "shoulder_right",
    "elbow_right",
    "wrist_right",
    "hand_right",
    "hip_left",
    "knee_left",
    "ankle_left",
    "foot_left",
    "hip_right",
    "knee_right",
    "ankle_right",
    "foot_right",
    "spine_shoulder",
    "hand_tip_left",
    "thumb_left",
    "hand_tip_right",
    "thumb_right",
];

/// Bones of the built-in layout (0-based).
///
/// Kinect v2 / NTU joint indexing. Hand, hand tip and thumb all hang off the
/// wrist, which makes the longest leaf-to-leaf path (foot to hand) 10 hops.
pub const EDGES_25: [(usize, usize); 24] = [
    (0, 1),
    (1, 20),
    (2, 20),
    (3, 2),
    (4, 20),
    (5, 4),
    (6, 5),
    (7, 6),
    (8, 20),
    (9, 8),
    (10, 9),
    (11, 10),
    (12, 0),
    (13, 12),
    (14, 13),
    (15, 14),
    (16, 0),
    (17, 16),
    (18, 17),
    (19, 18),
    (21, 6),
    (22, 6),
    (23, 10),
    (24, 10),
];

/// On-disk skeleton description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub n_joints: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    n_joints: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    raw: DenseMatrix,
    normalized: DenseMatrix,
}

impl SkeletonGraph {
    pub fn new(n_joints: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Result<Self, SkeletonError> {
        let weights = weights.unwrap_or_else(|| vec![1.0; edges.len()]);
        if weights.len() != edges.len() {
            return Err(SkeletonError::WeightCount {
                edges: edges.len(),
                weights: weights.len(),
            });
        }
        let mut raw = DenseMatrix::zeros(n_joints, n_joints);
        for (&(i, j), &w) in edges.iter().zip(&weights) {
            if i >= n_joints || j >= n_joints {
                return Err(SkeletonError::BadJoint { i, j, n: n_joints });
            }
            if i == j {
                return Err(SkeletonError::SelfLoop(i));
            }
            if w < 0.0 || !w.is_finite() {
                return Err(SkeletonError::NegativeWeight { i, j, weight: w });
            }
            raw[(i, j)] += w;
            raw[(j, i)] += w;
        }
        let normalized = normalized_adjacency(&raw)?;
        Ok(Self {
            n_joints,
            edges,
            weights,
            raw,
            normalized,
        })
    }

    pub fn from_file(file: SkeletonFile) -> Result<Self, SkeletonError> {
        let edges = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(file.n_joints, edges, file.weights)
    }

    pub fn load(path: &Path) -> Result<Self, SkeletonError> {
        let text = std::fs::read_to_string(path)?;
        let file: SkeletonFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> SkeletonFile {
        SkeletonFile {
            n_joints: self.n_joints,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            weights: Some(self.weights.clone()),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Symmetric weighted adjacency without self-loops.
    pub fn raw_adjacency(&self) -> &DenseMatrix {
        &self.raw
    }

    /// `D^{-1/2} (raw + I) D^{-1/2}`.
    pub fn normalized_adjacency(&self) -> &DenseMatrix {
        &self.normalized
    }

    /// Hop distances from `source` (`usize::MAX` when unreachable).
    pub fn hops_from(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_joints];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.n_joints {
                if self.raw[(u, v)] > 0.0 && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n_joints];
        let mut count = 0;
        for s in 0..self.n_joints {
            if seen[s] {
                continue;
            }
            count += 1;
            for (v, d) in self.hops_from(s).into_iter().enumerate() {
                if d != usize::MAX {
                    seen[v] = true;
                }
            }
        }
        count
    }

    /// Longest shortest path, in hops, over connected pairs.
    pub fn diameter(&self) -> usize {
        (0..self.n_joints)
            .flat_map(|s| self.hops_from(s))
            .filter(|&d| d != usize::MAX)
            .max()
            .unwrap_or(0)
    }

    pub fn spectrum(&self) -> Result<SkeletonSpectrum, SkeletonError> {
        Ok(SkeletonSpectrum {
            eig: sym_eig(&self.normalized)?,
        })
    }
}

/// The 25-joint, 24-bone tree with unit weights.
pub fn builtin_skeleton_25() -> SkeletonGraph {
    SkeletonGraph::new(25, EDGES_25.to_vec(), None).expect("built-in skeleton is valid")
}

/// `D^{-1/2} (raw + I) D^{-1/2}` with `D_ii = sum_j (raw_ij + 1)` over the
/// self-looped matrix.
pub fn normalized_adjacency(raw: &DenseMatrix) -> Result<DenseMatrix, SkeletonError> {
    if !raw.is_square() {
        return Err(SkeletonError::Linalg(LinalgError::NonSquare {
            rows: raw.rows(),
            cols: raw.cols(),
        }));
    }
    let n = raw.rows();
    for i in 0..n {
        if raw[(i, i)] != 0.0 {
            return Err(SkeletonError::SelfLoop(i));
        }
        for j in 0..n {
            let w = raw[(i, j)];
            if w < 0.0 {
                return Err(SkeletonError::NegativeWeight { i, j, weight: w });
            }
            if w != raw[(j, i)] {
                return Err(SkeletonError::AsymmetricInput);
            }
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = raw.row(i).iter().sum::<f64>() + 1.0;
            1.0 / d.sqrt()
        })
        .collect();
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let looped = raw[(i, j)] + if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = inv_sqrt[i] * looped * inv_sqrt[j];
        }
    }
    Ok(a)
}

/// Eigenbasis of a skeleton's normalized adjacency, ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SkeletonSpectrum {
    pub eig: SymEig,
}

impl SkeletonSpectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }

    /// Mean (over valid frames) squared projection of one channel's joint
    /// signal onto each eigenvector.
    pub fn energy(&self, seq: &FeatureSequence, channel: usize) -> Result<Vec<f64>, SkeletonError> {
        let n = self.eig.len();
        let dim = seq.dim();
        if n == 0 || dim % n != 0 {
            return Err(SkeletonError::JointCountMismatch { dim, joints: n });
        }
        let channels = dim / n;
        if channel >= channels {
            return Err(SkeletonError::BadChannel { channel, channels });
        }
        let basis: Vec<Vec<f64>> = (0..n).map(|k| self.eig.vector(k)).collect();
        let mut energy = vec![0.0; n];
        for frame in seq.valid_frames() {
            let x = &frame[channel * n..(channel + 1) * n];
            for (e, u) in energy.iter_mut().zip(&basis) {
                let c = dot(u, x);
                *e += c * c;
            }
        }
        let t = seq.valid_length() as f64;
        energy.iter_mut().for_each(|e| *e /= t);
        Ok(energy)
    }

    /// Energy summed over every channel.
    pub fn energy_all_channels(&self, seq: &FeatureSequence) -> Result<Vec<f64>, SkeletonError> {
        let n = self.eig.len();
        if n == 0 || seq.dim() % n != 0 {
            return Err(SkeletonError::JointCountMismatch {
                dim: seq.dim(),
                joints: n,
            });
        }
        let mut total = vec![0.0; n];
        for c in 0..seq.dim() / n {
            for (t, e) in total.iter_mut().zip(self.energy(seq, c)?) {
                *t += e;
            }
        }
        Ok(total)
    }
}

pub fn spectral_energy(
    seq: &FeatureSequence,
    graph: &SkeletonGraph,
    channel: usize,
) -> Result<Vec<f64>, SkeletonError> {
    graph.spectrum()?.energy(seq, channel)
}

/// Share of total energy held by the top `ceil(N/3)` eigenvalue indices.
pub fn top_third_share(energy: &[f64]) -> f64 {
    let n = energy.len();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let top = n.div_ceil(3);
    energy[n - top..].iter().sum::<f64>() / total
}
