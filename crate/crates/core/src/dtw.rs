//! Cosine frame distance, path-normalized DTW, windowed DTW and the
//! sequence similarity kernel built on it.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{dot, DenseMatrix};
use crate::sequence::FeatureSequence;

/// Norm below which a frame is treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;
pub const DEFAULT_WINDOWS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtwError {
    #[error("frame dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("DTW needs two non-empty sequences")]
    EmptyInput,
    #[error("window count {m} invalid for padded length {t_pad}")]
    BadWindowCount { m: usize, t_pad: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sequence {id} has padded length {found}, expected {expected}")]
    InconsistentPadding { id: String, expected: usize, found: usize },
    #[error("sequences or windows disagree on padding or dimension")]
    PaddingMismatch,
}

/// `(1 - cos(a, b)) / 2`, with zero vectors at distance 0 from each other and
/// distance 1 from anything else.
pub fn frame_distance(a: &[f64], b: &[f64]) -> Result<f64, DtwError> {
    if a.len() != b.len() {
        return Err(DtwError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(match (unit_frame(a), unit_frame(b)) {
        (None, None) => 0.0,
        (Some(ua), Some(ub)) => unit_distance(&ua, &ub),
        _ => 1.0,
    })
}

/// `f / |f|`, or `None` for a frame whose norm is at most `ZERO_NORM`.
fn unit_frame(f: &[f64]) -> Option<Vec<f64>> {
    let norm = dot(f, f).sqrt();
    (norm > ZERO_NORM).then(|| f.iter().map(|v| v / norm).collect())
}

/// Cosine distance of unit vectors. Equal vectors give exactly zero, which
/// rounding in the dot product would not guarantee.
fn unit_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    ((1.0 - dot(a, b)) * 0.5).clamp(0.0, 1.0)
}

/// Accumulated cost of the optimal warping path and the number of cells on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub cost: f64,
    pub path_len: usize,
}

impl Alignment {
    pub fn normalized(&self) -> f64 {
        self.cost / self.path_len as f64
    }
}

/// Classic DTW over an arbitrary ground cost `cost(i, j)`.
///
/// Among equal-cost predecessors the diagonal wins, then `(i-1, j)`, then
/// `(i, j-1)` unless it gives a strictly shorter path; the path length
/// follows the chosen predecessors.
pub fn align(n: usize, m: usize, mut cost: impl FnMut(usize, usize) -> f64) -> Alignment {
    debug_assert!(n > 0 && m > 0);
    let width = m + 1;
    let mut acc = vec![f64::INFINITY; (n + 1) * width];
    let mut len = vec![0usize; (n + 1) * width];
    acc[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let diag = (i - 1) * width + (j - 1);
            let up = (i - 1) * width + j;
            let left = i * width + (j - 1);
            // Between `up` and `left` at equal cost the shorter path wins, which
            // keeps the result exactly symmetric under swapping the inputs.
            let side = if acc[left] < acc[up] || (acc[left] == acc[up] && len[left] < len[up]) {
                left
            } else {
                up
            };
            let best = if acc[side] < acc[diag] { side } else { diag };
            let here = i * width + j;
            acc[here] = cost(i - 1, j - 1) + acc[best];
            len[here] = len[best] + 1;
        }
    }
    Alignment {
        cost: acc[n * width + m],
        path_len: len[n * width + m],
    }
}

/// DTW with a caller-supplied ground distance, normalized by path length.
pub fn dtw_with<T>(a: &[T], b: &[T], dist: impl Fn(&T, &T) -> f64) -> Result<f64, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptyInput);
    }
    Ok(align(a.len(), b.len(), |i, j| dist(&a[i], &b[j])).normalized())
}

/// Path-normalized DTW under [`frame_distance`]; the result lies in `[0, 1]`.
pub fn dtw_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, DtwError> {
    if a.is_empty() || b.is_empty() {
        return Err(DtwError::EmptyInput);
    }
    let dim = a[0].len();
    if let Some(f) = a.iter().chain(b).find(|f| f.len() != dim) {
        return Err(DtwError::DimensionMismatch(dim, f.len()));
    }
    dtw_with(a, b, |x, y| frame_distance(x, y).expect("dimensions checked"))
}

/// Per-window weights fitted from the padding statistics of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWeights {
    /// `m + 1` frame indices; window `w` covers `boundaries[w]..boundaries[w + 1]`.
    pub boundaries: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl WindowWeights {
    pub fn window_count(&self) -> usize {
        self.alpha.len()
    }

    pub fn padded_length(&self) -> usize {
        *self.boundaries.last().expect("at least one window")
    }

    /// Equal-width windows and uniform weights, without looking at data.
    pub fn uniform(t_pad: usize, m: usize) -> Result<Self, DtwError> {
        let boundaries = window_boundaries(t_pad, m)?;
        Ok(Self {
            boundaries,
            alpha: vec![1.0 / m as f64; m],
        })
    }
}

fn window_boundaries(t_pad: usize, m: usize) -> Result<Vec<usize>, DtwError> {
    if m == 0 || m > t_pad {
        return Err(DtwError::BadWindowCount { m, t_pad });
    }
    let width = t_pad / m;
    let mut b: Vec<usize> = (0..m).map(|w| w * width).collect();
    b.push(t_pad);
    Ok(b)
}

/// Window weight proportional to the share of sequences with at least one
/// valid frame inside the window. Validity is a prefix, so the weights never
/// increase along time.
pub fn fit_window_weights(dataset: &[FeatureSequence], m: usize) -> Result<WindowWeights, DtwError> {
    let first = dataset.first().ok_or(DtwError::EmptyDataset)?;
    let t_pad = first.padded_length();
    if let Some(s) = dataset.iter().find(|s| s.padded_length() != t_pad) {
        return Err(DtwError::InconsistentPadding {
            id: s.id.clone(),
            expected: t_pad,
            found: s.padded_length(),
        });
    }
    let boundaries = window_boundaries(t_pad, m)?;
    let n = dataset.len() as f64;
    let raw: Vec<f64> = (0..m)
        .map(|w| {
            let start = boundaries[w];
            dataset.iter().filter(|s| s.valid_length() > start).count() as f64 / n
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(WindowWeights {
        boundaries,
        alpha: raw.iter().map(|r| r / total).collect(),
    })
}

/// A sequence with unit-normalized valid frames, ready for repeated
/// cosine-distance evaluation.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    dim: usize,
    padded: usize,
    valid: usize,
    /// Valid frames scaled to unit norm (zero frames stay zero), row-major.
    unit: Vec<f64>,
    nonzero: Vec<bool>,
}

impl PreparedSequence {
    pub fn new(seq: &FeatureSequence) -> Self {
        let dim = seq.dim();
        let valid = seq.valid_length();
        let mut unit = Vec::with_capacity(valid * dim);
        let mut nonzero = Vec::with_capacity(valid);
        for f in seq.valid_frames() {
            match unit_frame(f) {
                Some(u) => {
                    unit.extend(u);
                    nonzero.push(true);
                }
                None => {
                    unit.extend(std::iter::repeat_n(0.0, dim));
                    nonzero.push(false);
                }
            }
        }
        Self {
            dim,
            padded: seq.padded_length(),
            valid,
            unit,
            nonzero,
        }
    }

    fn frame(&self, t: usize) -> &[f64] {
        &self.unit[t * self.dim..(t + 1) * self.dim]
    }

    fn distance(&self, i: usize, other: &Self, j: usize) -> f64 {
        match (self.nonzero[i], other.nonzero[j]) {
            (false, false) => 0.0,
            (true, true) => unit_distance(self.frame(i), other.frame(j)),
            _ => 1.0,
        }
    }
}

/// Windowed DTW between two prepared sequences.
pub fn wdtw_prepared(a: &PreparedSequence, b: &PreparedSequence, w: &WindowWeights) -> Result<f64, DtwError> {
    if a.padded != b.padded || a.dim != b.dim || w.padded_length() != a.padded {
        return Err(DtwError::PaddingMismatch);
    }
    let mut weighted = 0.0;
    let mut mass = 0.0;
    for (win, &alpha) in w.alpha.iter().enumerate() {
        let start = w.boundaries[win];
        let end = w.boundaries[win + 1];
        let a_end = end.min(a.valid);
        let b_end = end.min(b.valid);
        if a_end <= start || b_end <= start {
            continue;
        }
        let d = align(a_end - start, b_end - start, |i, j| a.distance(start + i, b, start + j)).normalized();
        weighted += alpha * d;
        mass += alpha;
    }
    Ok(if mass > 0.0 { weighted / mass } else { 1.0 })
}

/// Windowed DTW: alpha-weighted per-window DTW over windows where both
/// sequences have valid frames, renormalized by the alpha mass used.
/// Returns 1 when no window qualifies.
pub fn wdtw(a: &FeatureSequence, b: &FeatureSequence, w: &WindowWeights) -> Result<f64, DtwError> {
    wdtw_prepared(&PreparedSequence::new(a), &PreparedSequence::new(b), w)
}

/// `K_ij = 1 - wDTW(s_i, s_j)` with an exact unit diagonal.
///
/// Pairs are evaluated in parallel; each entry is computed independently, so
/// the result does not depend on the worker count.
pub fn kernel_matrix(dataset: &[FeatureSequence], w: &WindowWeights) -> Result<DenseMatrix, DtwError> {
    let n = dataset.len();
    let prepared: Vec<PreparedSequence> = dataset.par_iter().map(PreparedSequence::new).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| wdtw_prepared(&prepared[i], &prepared[j], w).map(|d| 1.0 - d))
                .collect::<Result<Vec<f64>, DtwError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut k = DenseMatrix::identity(n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}
