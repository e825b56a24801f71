//! Forward kernels and their vector-Jacobian products.
//!
//! The slice-level `*_forward` / `*_backward` pairs are shared by the eager
//! functions below and by [`super::Tape`].

use super::{Grid, Vec1};
use crate::error::{Error, Result};

/// Largest double strictly below one. Sigmoid outputs are clamped into
/// `[f64::MIN_POSITIVE, SIGMOID_UPPER]` so gates never reach 0 or 1 exactly.
pub const SIGMOID_UPPER: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, SIGMOID_UPPER)
}

// ---------------------------------------------------------------------------
// slice kernels
// ---------------------------------------------------------------------------

/// Same-padded, stride-1 cross-correlation. `x` is `c_in × t`, `w` is
/// `c_out × c_in × k`, output is `c_out × t`.
pub(crate) fn conv1d_forward(
    x: &[f64],
    c_in: usize,
    t: usize,
    w: &[f64],
    b: &[f64],
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * t];
    for o in 0..c_out {
        let row = &mut out[o * t..(o + 1) * t];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..c_in {
            let xi = &x[i * t..(i + 1) * t];
            let wk = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for (j, &wj) in wk.iter().enumerate() {
                let shift = j as isize - pad;
                // out[τ] += w[j] * x[τ + shift] for 0 <= τ + shift < t
                let lo = (-shift).max(0) as usize;
                let hi = ((t as isize) - shift).min(t as isize).max(0) as usize;
                for tau in lo..hi {
                    row[tau] += wj * xi[(tau as isize + shift) as usize];
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] with respect to input, weights and bias.
pub(crate) fn conv1d_backward(
    x: &[f64],
    c_in: usize,
    t: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (k / 2) as isize;
    let mut gx = vec![0.0; c_in * t];
    let mut gw = vec![0.0; c_out * c_in * k];
    let mut gb = vec![0.0; c_out];
    for o in 0..c_out {
        let go = &grad_out[o * t..(o + 1) * t];
        gb[o] = go.iter().sum();
        for i in 0..c_in {
            let xi = &x[i * t..(i + 1) * t];
            let base = (o * c_in + i) * k;
            for j in 0..k {
                let shift = j as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = ((t as isize) - shift).min(t as isize).max(0) as usize;
                let wj = w[base + j];
                let mut acc = 0.0;
                let gxi = &mut gx[i * t..(i + 1) * t];
                for tau in lo..hi {
                    let src = (tau as isize + shift) as usize;
                    acc += go[tau] * xi[src];
                    gxi[src] += go[tau] * wj;
                }
                gw[base + j] += acc;
            }
        }
    }
    (gx, gw, gb)
}

/// `W·v + b` with `W` stored `out × in` row-major.
pub(crate) fn dense_forward(v: &[f64], w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = v.len();
    (0..out_dim)
        .map(|o| {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            b[o] + wrow.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn dense_backward(v: &[f64], w: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = v.len();
    let mut gv = vec![0.0; in_dim];
    let mut gw = vec![0.0; grad_out.len() * in_dim];
    for (o, &g) in grad_out.iter().enumerate() {
        for i in 0..in_dim {
            gv[i] += w[o * in_dim + i] * g;
            gw[o * in_dim + i] = g * v[i];
        }
    }
    (gv, gw, grad_out.to_vec())
}

pub(crate) fn mean_over_rows_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= rows as f64);
    out
}

pub(crate) fn mean_over_cols_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| x[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64)
        .collect()
}

pub(crate) fn mul_row_raw(a: &[f64], x: &[f64], cols: usize) -> Vec<f64> {
    x.iter().enumerate().map(|(idx, v)| a[idx % cols] * v).collect()
}

pub(crate) fn mul_col_raw(a: &[f64], x: &[f64], cols: usize) -> Vec<f64> {
    x.iter().enumerate().map(|(idx, v)| a[idx / cols] * v).collect()
}

// ---------------------------------------------------------------------------
// eager API
// ---------------------------------------------------------------------------

/// Same-padded 1D convolution. `weights` is `out_channels × x.rows() × kernel_size`.
pub fn conv1d_same(x: &Grid, weights: &[f64], bias: &[f64], out_channels: usize, kernel_size: usize) -> Result<Grid> {
    if kernel_size % 2 == 0 {
        return Err(Error::shape(format!("kernel size must be odd, got {kernel_size}")));
    }
    if weights.len() != out_channels * x.rows() * kernel_size {
        return Err(Error::shape(format!(
            "conv weights hold {} values, expected {}x{}x{}",
            weights.len(),
            out_channels,
            x.rows(),
            kernel_size
        )));
    }
    if bias.len() != out_channels {
        return Err(Error::shape(format!("conv bias has {} values, expected {out_channels}", bias.len())));
    }
    let out = conv1d_forward(x.values(), x.rows(), x.cols(), weights, bias, out_channels, kernel_size);
    Grid::new(out_channels, x.cols(), out)
}

/// `W·v + b` for `W` of shape `out_dim × v.len()`.
pub fn dense(v: &Vec1, weights: &[f64], bias: &[f64], out_dim: usize) -> Result<Vec1> {
    if weights.len() != out_dim * v.len() || bias.len() != out_dim {
        return Err(Error::shape(format!(
            "dense layer {}x{} does not accept input of length {}",
            out_dim,
            weights.len() / out_dim.max(1),
            v.len()
        )));
    }
    Ok(Vec1::new(dense_forward(v.values(), weights, bias, out_dim)))
}

/// Types whose values can be transformed elementwise.
pub trait Elementwise: Sized {
    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self;
}

impl Elementwise for Grid {
    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        self.map(f)
    }
}

impl Elementwise for Vec1 {
    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        self.map(f)
    }
}

pub fn relu<T: Elementwise>(x: &T) -> T {
    x.map_values(|v| v.max(0.0))
}

pub fn sigmoid<T: Elementwise>(x: &T) -> T {
    x.map_values(sigmoid_scalar)
}

/// Averages the rows together: one value per column.
pub fn mean_over_rows(x: &Grid) -> Vec1 {
    Vec1::new(mean_over_rows_raw(x.values(), x.rows(), x.cols()))
}

/// Averages along each row: one value per row.
pub fn mean_over_cols(x: &Grid) -> Vec1 {
    Vec1::new(mean_over_cols_raw(x.values(), x.rows(), x.cols()))
}

/// `out[c, t] = a[t] · x[c, t]`
pub fn broadcast_mul_row(a: &Vec1, x: &Grid) -> Result<Grid> {
    if a.len() != x.cols() {
        return Err(Error::shape(format!("row gate of length {} against {} columns", a.len(), x.cols())));
    }
    Grid::new(x.rows(), x.cols(), mul_row_raw(a.values(), x.values(), x.cols()))
}

/// `out[c, t] = a[c] · x[c, t]`
pub fn broadcast_mul_col(a: &Vec1, x: &Grid) -> Result<Grid> {
    if a.len() != x.rows() {
        return Err(Error::shape(format!("column gate of length {} against {} rows", a.len(), x.rows())));
    }
    Grid::new(x.rows(), x.cols(), mul_col_raw(a.values(), x.values(), x.cols()))
}

/// Stacks `x` above `y`.
pub fn concat_rows(x: &Grid, y: &Grid) -> Result<Grid> {
    if x.cols() != y.cols() {
        return Err(Error::shape(format!("cannot stack {} columns over {} columns", x.cols(), y.cols())));
    }
    let mut values = Vec::with_capacity(x.values().len() + y.values().len());
    values.extend_from_slice(x.values());
    values.extend_from_slice(y.values());
    Grid::new(x.rows() + y.rows(), x.cols(), values)
}
