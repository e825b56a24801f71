use rand::Rng;

use super::{check_inputs, AttentionDims};
use crate::error::{Error, Result};
use crate::tensor::{DenseLayer, Grid, ParamStore, Tape, Var};

/// Two-layer bottleneck `sigmoid(excite(relu(squeeze(v))))`.
#[derive(Debug, Clone, PartialEq)]
struct Bottleneck {
    squeeze: DenseLayer,
    excite: DenseLayer,
}

impl Bottleneck {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            squeeze: DenseLayer::new(store, &format!("{prefix}.squeeze"), input, hidden, rng)?,
            excite: DenseLayer::new(store, &format!("{prefix}.excite"), hidden, output, rng)?,
        })
    }

    fn record(&self, tape: &mut Tape, store: &ParamStore, pooled: Var) -> Result<Var> {
        let h = self.squeeze.record(tape, store, pooled)?;
        let h = tape.relu(h);
        let z = self.excite.record(tape, store, h)?;
        Ok(tape.sigmoid(z))
    }

    fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }
}

/// Squeeze-and-excitation on F: channel gate from F's own time-pooled statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeModule {
    pub dims: AttentionDims,
    pub reduction: usize,
    body: Bottleneck,
}

impl SeModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        reduction: usize,
        dims: AttentionDims,
        rng: &mut R,
    ) -> Result<Self> {
        let c = dims.target_channels;
        if reduction == 0 || c % reduction != 0 || c / reduction == 0 {
            return Err(Error::config(format!("SE: C_out={c} is not divisible by reduction ratio {reduction}")));
        }
        let body = Bottleneck::new(store, &format!("{prefix}.se"), c, c / reduction, c, rng)?;
        Ok(Self { dims, reduction, body })
    }

    pub fn squeeze_layer(&self) -> &DenseLayer {
        &self.body.squeeze
    }

    pub fn excite_layer(&self) -> &DenseLayer {
        &self.body.excite
    }

    pub fn record_gate(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        let pooled = tape.mean_over_cols(f)?;
        self.body.record(tape, store, pooled)
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        check_inputs(tape, self.dims, None, f)?;
        let gate = self.record_gate(tape, store, f)?;
        tape.mul_col(gate, f)
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count()
    }
}

/// SE-style bottleneck fed with the time-pooled R instead of F; no conv blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FfCsaModule {
    pub dims: AttentionDims,
    body: Bottleneck,
}

impl FfCsaModule {
    /// Hidden width is `max(1, C_in / reduction)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        reduction: usize,
        dims: AttentionDims,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 {
            return Err(Error::config("FF-CSA: reduction ratio must be positive"));
        }
        let hidden = (dims.source_channels / reduction).max(1);
        let body = Bottleneck::new(store, &format!("{prefix}.ff"), dims.source_channels, hidden, dims.target_channels, rng)?;
        Ok(Self { dims, body })
    }

    pub fn excite_layer(&self) -> &DenseLayer {
        &self.body.excite
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, r: Var, f: Var) -> Result<Var> {
        check_inputs(tape, self.dims, Some(r), f)?;
        let pooled = tape.mean_over_cols(r)?;
        let gate = self.body.record(tape, store, pooled)?;
        tape.mul_col(gate, f)
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count()
    }
}

pub fn apply_se(module: &SeModule, store: &ParamStore, f: &Grid) -> Result<Grid> {
    let mut tape = Tape::new();
    let fv = tape.input_grid(f);
    let out = module.record(&mut tape, store, fv)?;
    Ok(tape.grid(out))
}

pub fn apply_ff_csa(module: &FfCsaModule, store: &ParamStore, r: &Grid, f: &Grid) -> Result<Grid> {
    let mut tape = Tape::new();
    let (rv, fv) = (tape.input_grid(r), tape.input_grid(f));
    let out = module.record(&mut tape, store, rv, fv)?;
    Ok(tape.grid(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{CsaConfig, CsaModule};
    use crate::tensor::ops::sigmoid_scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_grid(rows: usize, cols: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::new(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn se(c_out: usize, seed: u64) -> (ParamStore, SeModule) {
        let dims = AttentionDims { source_channels: 4, target_channels: c_out, temporal_len: 7 };
        let mut store = ParamStore::new();
        let m = SeModule::new(&mut store, "attention", 4, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, m)
    }

    #[test]
    fn zeroed_se_halves_input() {
        let (mut store, m) = se(8, 0);
        for layer in [*m.squeeze_layer(), *m.excite_layer()] {
            store.fill(layer.weight, 0.0);
            store.fill(layer.bias, 0.0);
        }
        let f = random_grid(8, 7, 1);
        assert_eq!(apply_se(&m, &store, &f).unwrap(), f.map(|v| 0.5 * v));
    }

    #[test]
    fn zero_input_stays_zero() {
        let (store, m) = se(8, 2);
        assert_eq!(apply_se(&m, &store, &Grid::zeros(8, 7)).unwrap(), Grid::zeros(8, 7));
    }

    #[test]
    fn se_matches_loop_oracle() {
        let (store, m) = se(8, 3);
        let f = random_grid(8, 7, 4);
        // squeeze/excite evaluated directly from the stored weights
        let pooled: Vec<f64> = (0..8).map(|c| f.row(c).iter().sum::<f64>() / 7.0).collect();
        let (w1, b1) = (store.values(m.squeeze_layer().weight), store.values(m.squeeze_layer().bias));
        let (w2, b2) = (store.values(m.excite_layer().weight), store.values(m.excite_layer().bias));
        let hidden: Vec<f64> =
            (0..2).map(|h| (b1[h] + (0..8).map(|c| w1[h * 8 + c] * pooled[c]).sum::<f64>()).max(0.0)).collect();
        let gate: Vec<f64> =
            (0..8).map(|c| sigmoid_scalar(b2[c] + (0..2).map(|h| w2[c * 2 + h] * hidden[h]).sum::<f64>())).collect();
        let out = apply_se(&m, &store, &f).unwrap();
        for c in 0..8 {
            for t in 0..7 {
                let expected = gate[c] * f.get(c, t);
                assert!((out.get(c, t) - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn se_requires_divisible_channels() {
        let dims = AttentionDims { source_channels: 4, target_channels: 6, temporal_len: 7 };
        let err = SeModule::new(&mut ParamStore::new(), "a", 4, dims, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn ff_zero_excitation_halves_input() {
        let dims = AttentionDims { source_channels: 4, target_channels: 3, temporal_len: 7 };
        let mut store = ParamStore::new();
        let m = FfCsaModule::new(&mut store, "attention", 4, dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.fill(m.excite_layer().weight, 0.0);
        store.fill(m.excite_layer().bias, 0.0);
        let (r, f) = (random_grid(4, 7, 1), random_grid(3, 7, 2));
        assert_eq!(apply_ff_csa(&m, &store, &r, &f).unwrap(), f.map(|v| 0.5 * v));
    }

    #[test]
    fn ff_preserves_shape() {
        for (c_in, c_out, t) in [(4, 3, 7), (9, 2, 1), (1, 5, 12)] {
            let dims = AttentionDims { source_channels: c_in, target_channels: c_out, temporal_len: t };
            let mut store = ParamStore::new();
            let m = FfCsaModule::new(&mut store, "a", 4, dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let out = apply_ff_csa(&m, &store, &random_grid(c_in, t, 1), &random_grid(c_out, t, 2)).unwrap();
            assert_eq!(out.shape(), (c_out, t));
        }
    }

    #[test]
    fn ff_is_smaller_than_one_conv_csa() {
        // C_in=400, T=100, C_out=256
        // CSA 1-conv: 2·(400·400·3 + 400) + (100·100 + 100) + (400·256 + 256) + (512·256 + 256) = 1_204_884
        // FF-CSA (hidden 100): (400·100 + 100) + (100·256 + 256) = 65_956
        let dims = AttentionDims { source_channels: 400, target_channels: 256, temporal_len: 100 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s1 = ParamStore::new();
        let ff = FfCsaModule::new(&mut s1, "a", 4, dims, &mut rng).unwrap();
        let mut s2 = ParamStore::new();
        let cfg = CsaConfig { conv_blocks: 1, ..CsaConfig::default() };
        let csa = CsaModule::new(&mut s2, "a", &cfg, dims, &mut rng).unwrap();
        assert_eq!(ff.param_count(), 65_956);
        assert_eq!(csa.param_count(), 1_204_884);
        assert!(ff.param_count() < csa.param_count());
    }
}
