//! `STGT` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | field                                   |
//! |------------|-----------------------------------------|
//! | 4          | magic `STGT`                            |
//! | 1          | format version (1)                      |
//! | 1          | dtype code (0 = f64 little-endian)      |
//! | 1          | number of dimensions                    |
//! | 4 per dim  | dimension sizes, `u32`                  |
//! | 8 per item | payload, row-major                      |

use std::path::Path;

use stgg_core::sequence::FeatureSequence;
use thiserror::Error;

pub const TENSOR_MAGIC: [u8; 4] = *b"STGT";
pub const TENSOR_VERSION: u8 = 1;
pub const DTYPE_F64_LE: u8 = 0;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("file ends early: {needed} more bytes expected")]
    Truncated { needed: usize },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
    #[error("dimension {0} does not fit the on-disk u32 field")]
    DimensionTooLarge(usize),
    #[error("{0} dimensions do not fit the on-disk u8 field")]
    TooManyDimensions(usize),
    #[error("tensor holds {found} values but its dimensions need {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("payload holds a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    /// Stable numeric code per error kind, for diagnostics and tests.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic { .. } => 1,
            FormatError::UnsupportedVersion(_) => 2,
            FormatError::UnsupportedDtype(_) => 3,
            FormatError::Truncated { .. } => 4,
            FormatError::TrailingBytes(_) => 5,
            FormatError::DimensionTooLarge(_) => 6,
            FormatError::TooManyDimensions(_) => 7,
            FormatError::LengthMismatch { .. } => 8,
            FormatError::NonFinite(_) => 9,
            FormatError::Checkpoint(_) => 10,
            FormatError::Io(_) => 11,
        }
    }
}

/// Byte cursor that reports truncation instead of panicking.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(FormatError::Truncated { needed: n - rest });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, FormatError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(FormatError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<(), FormatError> {
        let ndim = u8::try_from(self.dims.len()).map_err(|_| FormatError::TooManyDimensions(self.dims.len()))?;
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.push(DTYPE_F64_LE);
        out.push(ndim);
        for &d in &self.dims {
            let d32 = u32::try_from(d).map_err(|_| FormatError::DimensionTooLarge(d))?;
            out.extend_from_slice(&d32.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 8 * self.data.len());
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self, FormatError> {
        r.magic(TENSOR_MAGIC)?;
        let version = r.u8()?;
        if version != TENSOR_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F64_LE {
            return Err(FormatError::UnsupportedDtype(dtype));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(FormatError::DimensionTooLarge(usize::MAX))?;
        let bytes = r.take(count.checked_mul(8).ok_or(FormatError::DimensionTooLarge(count))?)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        Ok(Self { dims, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let t = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Padded frames of a sequence as a `t_pad x dim` matrix.
    pub fn from_sequence(seq: &FeatureSequence) -> Self {
        Self {
            dims: vec![seq.padded_length(), seq.dim()],
            data: seq.frames().iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> Option<Vec<Vec<f64>>> {
        match self.dims[..] {
            [rows, cols] => Some(
                (0..rows)
                    .map(|r| self.data[r * cols..(r + 1) * cols].to_vec())
                    .collect(),
            ),
            _ => None,
        }
    }
}
