use rand::Rng;

use super::{ops, Grid, ParamId, ParamStore, Tape, Var, Vec1};
use crate::error::{Error, Result};

/// Same-padded 1D convolution whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1dLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1dLayer {
    /// Registers `{path}.weight` (out × in × k, He-uniform) and `{path}.bias` (zeros).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::config(format!("{path}: kernel size must be odd, got {kernel_size}")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config(format!("{path}: channel counts must be positive")));
        }
        let weight = store.add_kaiming(
            format!("{path}.weight"),
            vec![out_channels, in_channels, kernel_size],
            in_channels * kernel_size,
            rng,
        );
        let bias = store.add_zeros(format!("{path}.bias"), vec![out_channels]);
        Ok(Self { in_channels, out_channels, kernel_size, weight, bias })
    }

    pub fn forward(&self, store: &ParamStore, x: &Grid) -> Result<Grid> {
        if x.rows() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.rows()
            )));
        }
        ops::conv1d_same(x, store.values(self.weight), store.values(self.bias), self.out_channels, self.kernel_size)
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size + self.out_channels
    }
}

/// Fully connected map `W·v + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!("{path}: dimensions must be positive")));
        }
        let weight = store.add_kaiming(format!("{path}.weight"), vec![out_dim, in_dim], in_dim, rng);
        let bias = store.add_zeros(format!("{path}.bias"), vec![out_dim]);
        Ok(Self { in_dim, out_dim, weight, bias })
    }

    pub fn forward(&self, store: &ParamStore, v: &Vec1) -> Result<Vec1> {
        ops::dense(v, store.values(self.weight), store.values(self.bias), self.out_dim)
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.dense(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}
