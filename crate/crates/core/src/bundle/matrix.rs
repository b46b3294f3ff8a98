//! Dense descriptor matrices and the `MQBL` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MQBL"
//! 4       4     version (u32, = 1)
//! 8       4     rows (u32)
//! 12      4     cols (u32)
//! 16      4*r*c values, IEEE-754 f32 LE, row-major
//! ```

use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::linalg;

use super::io::{read_file, write_atomic};

pub const MAGIC: &[u8; 4] = b"MQBL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Row-major `f32` matrix; rows are items (images or regions), columns are
/// feature dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(dim_err!("matrix must be at least 1x1, got {rows}x{cols}"));
        }
        if values.len() != rows * cols {
            return Err(dim_err!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols,
                i % cols
            )));
        }
        Ok(DescriptorMatrix { rows, cols, values })
    }

    /// Builds from `f64` rows, rounding each value to `f32`.
    pub fn from_rows_f64(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(dim_err!("row {r} has {} columns, expected {cols}", row.len()));
            }
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), cols, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_f64(&self, r: usize) -> Vec<f64> {
        linalg::to_f64(self.row(r))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_mat(&self) -> linalg::Mat {
        linalg::Mat::from_vec(self.rows, self.cols, linalg::to_f64(&self.values))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an `MQBL` byte stream; `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(origin, "truncated MQBL header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(origin, "header magic mismatch (expected MQBL)"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported MQBL version {version}"),
            ));
        }
        let rows = word(8) as usize;
        let cols = word(12) as usize;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format(origin, "matrix size overflows"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                origin,
                format!(
                    "{rows}x{cols} matrix needs {expected} bytes, file has {}",
                    bytes.len()
                ),
            ));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, cols, values).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }
}
