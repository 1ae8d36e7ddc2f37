//! Variable-length multichannel sequences stored with trailing zero padding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("sequence {id}: valid length {valid} outside 1..={padded}")]
    BadValidLength { id: String, valid: usize, padded: usize },
    #[error("sequence {id}: frame {frame} has dimension {found}, expected {expected}")]
    FrameDimension {
        id: String,
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("sequence {id}: padding frame {frame} is not zero")]
    DirtyPadding { id: String, frame: usize },
    #[error("sequence {id}: non-finite value in frame {frame}")]
    NonFinite { id: String, frame: usize },
}

/// One action sample.
///
/// Frames are flattened `channels x joints` vectors with the channel index
/// outermost (`value(c, n) = frame[c * joints + n]`). Frames at or beyond
/// `valid_length` are exact zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub id: String,
    pub label: usize,
    frames: Vec<Vec<f64>>,
    valid_length: usize,
}

impl FeatureSequence {
    pub fn new(
        id: impl Into<String>,
        label: usize,
        frames: Vec<Vec<f64>>,
        valid_length: usize,
    ) -> Result<Self, SequenceError> {
        let id = id.into();
        let padded = frames.len();
        if valid_length == 0 || valid_length > padded {
            return Err(SequenceError::BadValidLength {
                id,
                valid: valid_length,
                padded,
            });
        }
        let dim = frames[0].len();
        for (t, f) in frames.iter().enumerate() {
            if f.len() != dim {
                return Err(SequenceError::FrameDimension {
                    id,
                    frame: t,
                    expected: dim,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(SequenceError::NonFinite { id, frame: t });
            }
            if t >= valid_length && f.iter().any(|v| *v != 0.0) {
                return Err(SequenceError::DirtyPadding { id, frame: t });
            }
        }
        Ok(Self {
            id,
            label,
            frames,
            valid_length,
        })
    }

    /// Builds a sequence from its valid frames and zero-pads to `padded_length`.
    pub fn from_valid(
        id: impl Into<String>,
        label: usize,
        mut frames: Vec<Vec<f64>>,
        padded_length: usize,
    ) -> Result<Self, SequenceError> {
        let valid = frames.len();
        let dim = frames.first().map_or(0, Vec::len);
        if padded_length >= valid {
            frames.resize(padded_length, vec![0.0; dim]);
        }
        Self::new(id, label, frames, valid)
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn valid_frames(&self) -> &[Vec<f64>] {
        &self.frames[..self.valid_length]
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn padded_length(&self) -> usize {
        self.frames.len()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    /// Returns a copy whose valid frames are mapped through `f`; padding stays zero.
    pub fn map_valid(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<Self, SequenceError> {
        let mut frames = self.frames.clone();
        for (t, frame) in frames.iter_mut().enumerate().take(self.valid_length) {
            *frame = f(t, &self.frames[t]);
        }
        Self::new(self.id.clone(), self.label, frames, self.valid_length)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_dirty_padding() {
        let frames = vec![vec![1.0], vec![0.5]];
        assert!(matches!(
            FeatureSequence::new("a", 0, frames, 1),
            Err(SequenceError::DirtyPadding { frame: 1, .. })
        ));
    }

    #[test]
    fn rejects_zero_valid_length() {
        assert!(FeatureSequence::new("a", 0, vec![vec![0.0]], 0).is_err());
    }

    #[test]
    fn from_valid_pads() {
        let s = FeatureSequence::from_valid("a", 1, vec![vec![1.0, 2.0]], 3).unwrap();
        assert_eq!(s.padded_length(), 3);
        assert_eq!(s.valid_length(), 1);
        assert_eq!(s.frames()[2], vec![0.0, 0.0]);
    }
}
