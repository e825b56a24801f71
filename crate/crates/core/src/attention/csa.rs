use rand::Rng;

use super::{check_inputs, AttentionDims, CsaConfig, Fusion};
use crate::error::{Error, Result};
use crate::tensor::{Conv1dLayer, DenseLayer, Grid, ParamStore, Tape, Var, Vec1};

/// A conv-ReLU stack followed by a dense map: the body of one CSA gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub convs: Vec<Conv1dLayer>,
    pub head: DenseLayer,
}

impl Branch {
    fn record_stack(&self, tape: &mut Tape, store: &ParamStore, r: Var) -> Result<Var> {
        let mut h = r;
        for conv in &self.convs {
            h = conv.record(tape, store, h)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv1dLayer::param_count).sum::<usize>() + self.head.param_count()
    }
}

/// Class-semantics attention: a temporal gate over T and a channel gate over
/// C_out, both computed from R, applied to F and optionally fused.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaModule {
    pub dims: AttentionDims,
    pub temporal: Option<Branch>,
    pub channel: Option<Branch>,
    /// `2·C_out → C_out`, kernel 1; present when both branches are concatenated.
    pub fuse: Option<Conv1dLayer>,
}

fn conv_stack<R: Rng + ?Sized>(
    store: &mut ParamStore,
    path: &str,
    cfg: &CsaConfig,
    c_in: usize,
    c_mid: usize,
    rng: &mut R,
) -> Result<Vec<Conv1dLayer>> {
    (0..cfg.conv_blocks)
        .map(|i| {
            let input = if i == 0 { c_in } else { c_mid };
            Conv1dLayer::new(store, &format!("{path}.conv{i}"), input, c_mid, cfg.kernel_size, rng)
        })
        .collect()
}

impl CsaModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &CsaConfig,
        dims: AttentionDims,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c_mid = cfg.c_mid.unwrap_or(dims.source_channels);
        let temporal = if cfg.use_temporal {
            let path = format!("{prefix}.temporal");
            let convs = conv_stack(store, &path, cfg, dims.source_channels, c_mid, rng)?;
            let head = DenseLayer::new(store, &format!("{path}.fc"), dims.temporal_len, dims.temporal_len, rng)?;
            Some(Branch { convs, head })
        } else {
            None
        };
        let channel = if cfg.use_channel {
            let path = format!("{prefix}.channel");
            let convs = conv_stack(store, &path, cfg, dims.source_channels, c_mid, rng)?;
            let head = DenseLayer::new(store, &format!("{path}.fc"), c_mid, dims.target_channels, rng)?;
            Some(Branch { convs, head })
        } else {
            None
        };
        let fuse = if cfg.fuses() && cfg.fusion == Fusion::ConcatProject {
            let c = dims.target_channels;
            Some(Conv1dLayer::new(store, &format!("{prefix}.fuse"), 2 * c, c, 1, rng)?)
        } else {
            None
        };
        Ok(Self { dims, temporal, channel, fuse })
    }

    fn check_r(&self, tape: &Tape, r: Var) -> Result<()> {
        let rs = tape.shape(r);
        if rs.len() != 2 || rs[0] != self.dims.source_channels || rs[1] != self.dims.temporal_len {
            return Err(Error::shape(format!(
                "R has shape {rs:?}, CSA built for {}x{}",
                self.dims.source_channels, self.dims.temporal_len
            )));
        }
        Ok(())
    }

    /// `A_T = sigmoid(fc_T(mean over channels of convstack(R)))`, length T.
    pub fn record_temporal_gate(&self, tape: &mut Tape, store: &ParamStore, r: Var) -> Result<Var> {
        self.check_r(tape, r)?;
        let branch = self.temporal.as_ref().ok_or_else(|| Error::config("CSA module has no temporal branch"))?;
        let h = branch.record_stack(tape, store, r)?;
        let y = tape.mean_over_rows(h)?;
        let z = branch.head.record(tape, store, y)?;
        Ok(tape.sigmoid(z))
    }

    /// `A_C = sigmoid(fc_C(mean over time of convstack(R)))`, length C_out.
    pub fn record_channel_gate(&self, tape: &mut Tape, store: &ParamStore, r: Var) -> Result<Var> {
        self.check_r(tape, r)?;
        let branch = self.channel.as_ref().ok_or_else(|| Error::config("CSA module has no channel branch"))?;
        let h = branch.record_stack(tape, store, r)?;
        let y = tape.mean_over_cols(h)?;
        let z = branch.head.record(tape, store, y)?;
        Ok(tape.sigmoid(z))
    }

    /// Gates F with whichever branches `cfg` enables and fuses them.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, cfg: &CsaConfig, r: Var, f: Var) -> Result<Var> {
        check_inputs(tape, self.dims, Some(r), f)?;
        let gated_t = if cfg.use_temporal {
            let a = self.record_temporal_gate(tape, store, r)?;
            Some(tape.mul_row(a, f)?)
        } else {
            None
        };
        let gated_c = if cfg.use_channel {
            let a = self.record_channel_gate(tape, store, r)?;
            Some(tape.mul_col(a, f)?)
        } else {
            None
        };
        match (gated_t, gated_c) {
            (Some(ft), Some(fc)) => match cfg.fusion {
                Fusion::Add => tape.add(ft, fc),
                Fusion::ConcatProject => {
                    let fuse = self.fuse.as_ref().ok_or_else(|| Error::config("CSA module has no fusion projection"))?;
                    let stacked = tape.concat_rows(ft, fc)?;
                    let projected = fuse.record(tape, store, stacked)?;
                    Ok(tape.relu(projected))
                }
            },
            (Some(single), None) | (None, Some(single)) => Ok(single),
            (None, None) => Err(Error::config("csa: at least one of use_temporal/use_channel must be true")),
        }
    }

    pub fn param_count(&self) -> usize {
        self.temporal.as_ref().map_or(0, Branch::param_count)
            + self.channel.as_ref().map_or(0, Branch::param_count)
            + self.fuse.as_ref().map_or(0, Conv1dLayer::param_count)
    }
}

/// Temporal gate `A_T ∈ (0,1)^T` for a class-semantics sequence R.
pub fn temporal_attention(module: &CsaModule, store: &ParamStore, r: &Grid) -> Result<Vec1> {
    let mut tape = Tape::new();
    let rv = tape.input_grid(r);
    let a = module.record_temporal_gate(&mut tape, store, rv)?;
    Ok(tape.vec1(a))
}

/// Channel gate `A_C ∈ (0,1)^{C_out}` for a class-semantics sequence R.
pub fn channel_attention(module: &CsaModule, store: &ParamStore, r: &Grid) -> Result<Vec1> {
    let mut tape = Tape::new();
    let rv = tape.input_grid(r);
    let a = module.record_channel_gate(&mut tape, store, rv)?;
    Ok(tape.vec1(a))
}

/// `F_A` for a CSA module; `cfg` selects branches and fusion.
pub fn apply_csa(module: &CsaModule, store: &ParamStore, cfg: &CsaConfig, r: &Grid, f: &Grid) -> Result<Grid> {
    let mut tape = Tape::new();
    let (rv, fv) = (tape.input_grid(r), tape.input_grid(f));
    let out = module.record(&mut tape, store, cfg, rv, fv)?;
    Ok(tape.grid(out))
}
