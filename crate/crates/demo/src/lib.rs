//! Browser demo: generate a synthetic video set, train a small localizer with
//! or without class-semantics attention, and look at its gates and proposals.
//!
//! Everything crosses the JS boundary as JSON strings. The `*_json` functions
//! hold the logic and are usable (and tested) natively.

use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use csa_core::attention::{channel_attention, temporal_attention, Attention, CsaConfig, Location, Variant};
use csa_core::metrics;
use csa_core::pipeline::{decode_proposals, evaluate, train, EvalConfig, Model, ModelConfig, TrainConfig};
use csa_core::synth::{generate, split, GenSpec, SyntheticVideo};

/// Knobs exposed on the page.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub variant: Variant,
    pub conv_blocks: usize,
    pub kernel_size: usize,
    pub location: Location,
    pub use_temporal: bool,
    pub use_channel: bool,
    pub noise_sigma: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Csa,
            conv_blocks: 2,
            kernel_size: 3,
            location: Location::End,
            use_temporal: true,
            use_channel: true,
            noise_sigma: 0.25,
            epochs: 6,
            seed: 0,
        }
    }
}

pub struct Session {
    model: Model,
    train_set: Vec<SyntheticVideo>,
    val_set: Vec<SyntheticVideo>,
    train_cfg: TrainConfig,
    eval_cfg: EvalConfig,
}

const SHOWN_PROPOSALS: usize = 10;
const MAX_EPOCHS: usize = 50;

impl Session {
    pub fn from_json(config: &str) -> Result<Self, String> {
        let cfg: DemoConfig = if config.trim().is_empty() {
            DemoConfig::default()
        } else {
            serde_json::from_str(config).map_err(|e| e.to_string())?
        };
        if !(1..=MAX_EPOCHS).contains(&cfg.epochs) {
            return Err(format!("epochs must be between 1 and {MAX_EPOCHS}"));
        }
        let spec = GenSpec {
            num_videos: 80,
            t: 40,
            c_in: 16,
            max_segment_len: 10,
            noise_sigma: cfg.noise_sigma,
            seed: cfg.seed,
            ..GenSpec::default()
        };
        let csa = CsaConfig {
            variant: cfg.variant,
            conv_blocks: cfg.conv_blocks,
            kernel_size: cfg.kernel_size,
            location: cfg.location,
            use_temporal: cfg.use_temporal,
            use_channel: cfg.use_channel,
            ..CsaConfig::default()
        };
        let model_cfg = ModelConfig { hidden: 16, c_out: 16, ..ModelConfig::default() };
        let videos = generate(&spec).map_err(|e| e.to_string())?;
        let (train_set, val_set) = split(&videos, 0.8, cfg.seed).map_err(|e| e.to_string())?;
        let model = Model::new(spec.c_in, spec.t, &model_cfg, &csa, cfg.seed).map_err(|e| e.to_string())?;
        let train_cfg = TrainConfig { epochs: cfg.epochs, seed: cfg.seed, ..TrainConfig::default() };
        train_cfg.validate().map_err(|e| e.to_string())?;
        let eval_cfg = EvalConfig { an_values: (1..=20).collect(), ..EvalConfig::default() };
        Ok(Self { model, train_set, val_set, train_cfg, eval_cfg })
    }

    pub fn val_len(&self) -> usize {
        self.val_set.len()
    }

    pub fn attention_parameters(&self) -> usize {
        self.model.attention_parameter_count()
    }

    /// Trains from the current weights and reports per-epoch losses and final metrics.
    pub fn train_json(&mut self) -> Result<String, String> {
        let history = train(&mut self.model, &self.train_set, &self.val_set, &self.train_cfg, &self.eval_cfg)
            .map_err(|e| e.to_string())?;
        let eval = evaluate(&self.model, &self.val_set, &self.eval_cfg).map_err(|e| e.to_string())?;
        Ok(json!({
            "history": history,
            "map": eval.map,
            "ar": eval.ar,
        })
        .to_string())
    }

    /// Features, ground truth, head outputs, gates and top proposals of one validation video.
    pub fn inspect_json(&self, index: usize) -> Result<String, String> {
        let video = self.val_set.get(index).ok_or_else(|| format!("no validation video {index}"))?;
        let r = &video.features;
        let (ps, pe) = self.model.forward(r).map_err(|e| e.to_string())?;
        let d_max = self.eval_cfg.d_max.unwrap_or(self.model.t / 2);
        let proposals = decode_proposals(&ps, &pe, SHOWN_PROPOSALS, d_max).map_err(|e| e.to_string())?;
        let (temporal, channel) = match &self.model.attention {
            Attention::Csa(m) => (
                m.temporal.as_ref().map(|_| temporal_attention(m, &self.model.store, r)).transpose(),
                m.channel.as_ref().map(|_| channel_attention(m, &self.model.store, r)).transpose(),
            ),
            _ => (Ok(None), Ok(None)),
        };
        let gate = |g: Option<csa_core::tensor::Vec1>| g.map(|v| v.into_values());
        Ok(json!({
            "rows": r.rows(),
            "cols": r.cols(),
            "features": r.values(),
            "segments": video.segments,
            "p_start": ps.values(),
            "p_end": pe.values(),
            "temporal_gate": gate(temporal.map_err(|e| e.to_string())?),
            "channel_gate": gate(channel.map_err(|e| e.to_string())?),
            "proposals": proposals.iter().map(|p| json!([p.start, p.end, p.score])).collect::<Vec<Value>>(),
        })
        .to_string())
    }
}

/// tIoU of two intervals and whether it clears each THUMOS-style threshold.
pub fn overlap_json(a: (f64, f64), b: (f64, f64)) -> Result<String, String> {
    let t = metrics::tiou(a, b).map_err(|e| e.to_string())?;
    Ok(json!({ "tiou": t, "matches": metrics::THUMOS_TIOUS.map(|thr| t >= thr) }).to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    /// `config` is a JSON object with any of the [`DemoConfig`] fields.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<Demo, JsError> {
        Session::from_json(config).map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn train(&mut self) -> Result<String, JsError> {
        self.0.train_json().map_err(|e| JsError::new(&e))
    }

    pub fn inspect(&self, index: usize) -> Result<String, JsError> {
        self.0.inspect_json(index).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = valLen)]
    pub fn val_len(&self) -> usize {
        self.0.val_len()
    }

    #[wasm_bindgen(js_name = attentionParameters)]
    pub fn attention_parameters(&self) -> usize {
        self.0.attention_parameters()
    }
}

#[wasm_bindgen]
pub fn overlap(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> Result<String, JsError> {
    overlap_json((a_start, a_end), (b_start, b_end)).map_err(|e| JsError::new(&e))
}
