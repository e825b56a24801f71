//! Attention blocks that turn an encoder feature `F` into `F_A`.
//!
//! CSA computes its gates from the class-semantics input `R`; the SE baseline
//! computes its gate from `F`. All blocks preserve the `C_out × T` shape of `F`.

mod config;
mod csa;
mod se;

pub use config::{CsaConfig, Fusion, Location, Variant};
pub use csa::{apply_csa, channel_attention, temporal_attention, Branch, CsaModule};
pub use se::{apply_ff_csa, apply_se, FfCsaModule, SeModule};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Grid, ParamStore, Tape, Var};

/// Shapes an attention block is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    /// Channels of R.
    pub source_channels: usize,
    /// Channels of F.
    pub target_channels: usize,
    pub temporal_len: usize,
}

/// One of the attention variants, built for fixed shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum Attention {
    None,
    Csa(CsaModule),
    FfCsa(FfCsaModule),
    Se(SeModule),
}

impl Attention {
    /// Registers the block's parameters under `prefix`.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &CsaConfig,
        dims: AttentionDims,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.variant {
            Variant::None => Attention::None,
            Variant::Csa => Attention::Csa(CsaModule::new(store, prefix, cfg, dims, rng)?),
            Variant::FfCsa => Attention::FfCsa(FfCsaModule::new(store, prefix, cfg.se_reduction, dims, rng)?),
            Variant::SeBaseline => Attention::Se(SeModule::new(store, prefix, cfg.se_reduction, dims, rng)?),
        })
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, cfg: &CsaConfig, r: Var, f: Var) -> Result<Var> {
        match self {
            Attention::None => Ok(f),
            Attention::Csa(m) => m.record(tape, store, cfg, r, f),
            Attention::FfCsa(m) => m.record(tape, store, r, f),
            Attention::Se(m) => m.record(tape, store, f),
        }
    }

    /// Eager evaluation on a throwaway tape.
    pub fn apply(&self, store: &ParamStore, cfg: &CsaConfig, r: &Grid, f: &Grid) -> Result<Grid> {
        let mut tape = Tape::new();
        let (rv, fv) = (tape.input_grid(r), tape.input_grid(f));
        let out = self.record(&mut tape, store, cfg, rv, fv)?;
        Ok(tape.grid(out))
    }
}

/// Checks that R and F match the construction shapes.
pub(crate) fn check_inputs(tape: &Tape, dims: AttentionDims, r: Option<Var>, f: Var) -> Result<()> {
    let fs = tape.shape(f);
    if fs.len() != 2 || fs[0] != dims.target_channels {
        return Err(Error::shape(format!("F has shape {fs:?}, attention built for {} channels", dims.target_channels)));
    }
    if let Some(r) = r {
        let rs = tape.shape(r);
        if rs.len() != 2 || rs[0] != dims.source_channels {
            return Err(Error::shape(format!(
                "R has shape {rs:?}, attention built for {} channels",
                dims.source_channels
            )));
        }
        if rs[1] != fs[1] {
            return Err(Error::Alignment { source_len: rs[1], target_len: fs[1] });
        }
    }
    Ok(())
}
