//! Class-semantics attention (CSA) for temporal action detection.
//!
//! The crate bundles everything needed to train and evaluate the attention
//! family on synthetic data:
//!
//! - [`tensor`]: grids, 1D conv / dense kernels, a reverse-mode tape, Adam.
//! - [`attention`]: the CSA temporal/channel gates and fusion, FF-CSA and an SE baseline.
//! - [`pipeline`]: a three-stage conv encoder with a start/end boundary head,
//!   loss, proposal decoding and the training loop.
//! - [`metrics`]: tIoU, AP, mAP over tIoU thresholds, AR@AN and AUC.
//! - [`synth`]: seeded prototype-plus-noise feature sequences with ground truth.
//! - [`experiment`]: JSON-configured runs, ablation sweeps and report comparison.
//! - [`gradcheck`]: central finite-difference verification of every gradient path.

pub mod attention;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
