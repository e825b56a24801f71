//! Minimal localization network: a three-stage conv encoder, one attention
//! insertion point, and a two-head boundary predictor.

mod decode;
mod loss;
mod train;

pub use decode::{decode_proposals, Proposal};
pub use loss::{boundary_loss, boundary_targets, record_boundary_loss, BoundaryTargets};
pub use train::{detect, evaluate, ground_truth, train, EpochRecord, EvalConfig, Evaluation, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Attention, AttentionDims, CsaConfig, Location};
use crate::error::{Error, Result};
use crate::tensor::{Conv1dLayer, Grid, ParamStore, Tape, Var, Vec1};

/// Prefix of every attention parameter path.
pub const ATTENTION_PREFIX: &str = "attention";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the two hidden encoder stages.
    pub hidden: usize,
    /// Channels of the encoder output F.
    pub c_out: usize,
    pub encoder_kernel: usize,
    pub head_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64, c_out: 32, encoder_kernel: 3, head_kernel: 3 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.c_out == 0 {
            return Err(Error::config("model.hidden and model.c_out must be positive"));
        }
        if self.encoder_kernel % 2 == 0 || self.head_kernel % 2 == 0 {
            return Err(Error::config("model kernel sizes must be odd"));
        }
        Ok(())
    }
}

/// `C_in → H → H → C_out`, each stage conv + ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub stages: [Conv1dLayer; 3],
}

/// Independent start and end heads, each conv `C_out → 1` + sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryHead {
    pub start: Conv1dLayer,
    pub end: Conv1dLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: EncoderNet,
    pub attention: Attention,
    pub head: BoundaryHead,
    pub csa: CsaConfig,
    pub c_in: usize,
    pub t: usize,
}

/// Independent initialisation stream per component so that variants sharing
/// a seed share their encoder and head weights.
fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Model {
    pub fn new(c_in: usize, t: usize, model: &ModelConfig, csa: &CsaConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        csa.validate()?;
        let mut store = ParamStore::new();
        let k = model.encoder_kernel;

        let mut rng = component_rng(seed, 0);
        let encoder = EncoderNet {
            stages: [
                Conv1dLayer::new(&mut store, "encoder.stage1", c_in, model.hidden, k, &mut rng)?,
                Conv1dLayer::new(&mut store, "encoder.stage2", model.hidden, model.hidden, k, &mut rng)?,
                Conv1dLayer::new(&mut store, "encoder.stage3", model.hidden, model.c_out, k, &mut rng)?,
            ],
        };

        let mut rng = component_rng(seed, 1);
        let head = BoundaryHead {
            start: Conv1dLayer::new(&mut store, "head.start", model.c_out, 1, model.head_kernel, &mut rng)?,
            end: Conv1dLayer::new(&mut store, "head.end", model.c_out, 1, model.head_kernel, &mut rng)?,
        };

        let target_channels = match csa.location {
            Location::Start => c_in,
            Location::Middle => model.hidden,
            Location::End => model.c_out,
        };
        let dims = AttentionDims { source_channels: c_in, target_channels, temporal_len: t };
        let attention = Attention::build(&mut store, ATTENTION_PREFIX, csa, dims, &mut component_rng(seed, 2))?;

        Ok(Self { store, encoder, attention, head, csa: csa.clone(), c_in, t })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn attention_parameter_count(&self) -> usize {
        self.store.scalar_count_with_prefix(&format!("{ATTENTION_PREFIX}."))
    }

    fn gate(&self, tape: &mut Tape, store: &ParamStore, r: Var, h: Var, at: Location) -> Result<Var> {
        if self.csa.location == at {
            self.attention.record(tape, store, &self.csa, r, h)
        } else {
            Ok(h)
        }
    }

    /// Records the network on `tape`; returns `(p_start, p_end)`, each of length T.
    pub fn record(&self, tape: &mut Tape, r: Var) -> Result<(Var, Var)> {
        self.record_with(tape, &self.store, r)
    }

    /// As [`Model::record`] but reading parameters from `store`, which must
    /// have the layout of `self.store`.
    pub fn record_with(&self, tape: &mut Tape, store: &ParamStore, r: Var) -> Result<(Var, Var)> {
        let rs = tape.shape(r);
        if rs != [self.c_in, self.t] {
            return Err(Error::shape(format!("model expects R of shape [{}, {}], got {rs:?}", self.c_in, self.t)));
        }
        let mut h = self.gate(tape, store, r, r, Location::Start)?;
        for (i, stage) in self.encoder.stages.iter().enumerate() {
            h = stage.record(tape, store, h)?;
            h = tape.relu(h);
            if i == 1 {
                h = self.gate(tape, store, r, h, Location::Middle)?;
            }
        }
        let f = self.gate(tape, store, r, h, Location::End)?;

        let mut heads = [self.head.start, self.head.end].into_iter().map(|layer| -> Result<Var> {
            let logits = layer.record(tape, store, f)?;
            let p = tape.sigmoid(logits);
            tape.reshape(p, vec![self.t])
        });
        let p_start = heads.next().expect("two heads")?;
        let p_end = heads.next().expect("two heads")?;
        Ok((p_start, p_end))
    }

    pub fn forward(&self, r: &Grid) -> Result<(Vec1, Vec1)> {
        let mut tape = Tape::new();
        let rv = tape.input_grid(r);
        let (ps, pe) = self.record(&mut tape, rv)?;
        Ok((tape.vec1(ps), tape.vec1(pe)))
    }
}
