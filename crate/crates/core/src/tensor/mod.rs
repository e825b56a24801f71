//! Dense real-valued grids and vectors, the forward kernels that act on them,
//! and a reverse-mode tape that differentiates compositions of those kernels.
//!
//! Every kernel here is a plain function over slices; [`Tape`] records calls to
//! the same kernels so the forward values seen during training are bitwise the
//! ones returned by the eager API.

mod adam;
mod layers;
pub mod ops;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv1dLayer, DenseLayer};
pub use params::{Checkpoint, CheckpointEntry, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, BCE_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `rows × cols` matrix stored row-major. Rows index channels, columns index
/// temporal points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GridRecord", try_from = "GridRecord")]
pub struct Grid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("grid dimensions must be positive, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        Self { rows, cols, values: vec![value; rows * cols] }
    }

    /// Builds a grid from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise map, shape preserved.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

/// Serialized form of a grid: `{"shape": [rows, cols], "values": [...]}`.
#[derive(Serialize, Deserialize)]
struct GridRecord {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl From<Grid> for GridRecord {
    fn from(g: Grid) -> Self {
        Self { shape: [g.rows, g.cols], values: g.values }
    }
}

impl TryFrom<GridRecord> for Grid {
    type Error = Error;

    fn try_from(r: GridRecord) -> Result<Self> {
        Grid::new(r.shape[0], r.shape[1], r.values)
    }
}

/// A dense vector: temporal gates, channel gates, pooled descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec1 {
    values: Vec<f64>,
}

impl Vec1 {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

impl From<Vec<f64>> for Vec1 {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl std::ops::Index<usize> for Vec1 {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}
