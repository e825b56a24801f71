use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode_proposals, record_boundary_loss, Model};
use crate::error::{Error, Result};
use crate::metrics::{
    activitynet_average_tious, ar_at_an, default_an_values, map_at_tious, ArCurve, Detection, GtSegment, MapTable,
    THUMOS_TIOUS,
};
use crate::synth::SyntheticVideo;
use crate::tensor::{Adam, AdamConfig, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The learning rate drops tenfold every `step_epoch` epochs; 0 disables it.
    pub step_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, weight_decay: 1e-4, step_epoch: 7, batch_size: 4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!("training.lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("training.weight_decay must be finite and non-negative"));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.step_epoch {
            0 => self.lr,
            s => self.lr * 0.1f64.powi((epoch / s) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
    pub an_values: Vec<usize>,
    /// Thresholds AR is averaged over.
    pub ar_tious: Vec<f64>,
    pub max_proposals: usize,
    /// Longest proposal; defaults to half the video length.
    pub d_max: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: THUMOS_TIOUS.to_vec(),
            an_values: default_an_values(),
            ar_tious: activitynet_average_tious(),
            max_proposals: 100,
            d_max: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiou_thresholds.is_empty() || self.ar_tious.is_empty() {
            return Err(Error::config("eval threshold lists must not be empty"));
        }
        if self.tiou_thresholds.iter().chain(&self.ar_tious).any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::config("tIoU thresholds must lie in (0, 1]"));
        }
        if self.an_values.is_empty() || self.an_values.contains(&0) {
            return Err(Error::config("eval.an_values must be non-empty and positive"));
        }
        if self.max_proposals == 0 {
            return Err(Error::config("eval.max_proposals must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "val_mAP_avg")]
    pub val_map_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub map: MapTable,
    pub ar: ArCurve,
}

/// Ground truth as class-agnostic segments; proposals carry no class.
pub fn ground_truth(videos: &[SyntheticVideo]) -> Vec<GtSegment> {
    videos
        .iter()
        .flat_map(|v| {
            v.segments.iter().map(move |s| GtSegment {
                video_id: v.id.to_string(),
                start: s.start as f64,
                end: s.end as f64,
                class_id: 0,
            })
        })
        .collect()
}

/// Mean loss and all decoded proposals over `videos`.
pub fn detect(model: &Model, videos: &[SyntheticVideo], cfg: &EvalConfig) -> Result<(f64, Vec<Detection>)> {
    let d_max = cfg.d_max.unwrap_or((model.t / 2).max(1));
    let mut loss = 0.0;
    let mut dets = Vec::new();
    for v in videos {
        let mut tape = Tape::new();
        let r = tape.input_grid(&v.features);
        let (ps, pe) = model.record(&mut tape, r)?;
        let l = record_boundary_loss(&mut tape, ps, pe, &v.segments)?;
        loss += tape.scalar(l);
        for p in decode_proposals(&tape.vec1(ps), &tape.vec1(pe), cfg.max_proposals, d_max)? {
            dets.push(Detection {
                video_id: v.id.to_string(),
                start: p.start as f64,
                end: p.end as f64,
                score: p.score,
                class_id: 0,
            });
        }
    }
    Ok((loss / videos.len().max(1) as f64, dets))
}

pub fn evaluate(model: &Model, videos: &[SyntheticVideo], cfg: &EvalConfig) -> Result<Evaluation> {
    let (loss, dets) = detect(model, videos, cfg)?;
    let gts = ground_truth(videos);
    Ok(Evaluation {
        loss,
        map: map_at_tious(&dets, &gts, &cfg.tiou_thresholds)?,
        ar: ar_at_an(&dets, &gts, &cfg.an_values, &cfg.ar_tious)?,
    })
}

/// Mini-batch Adam on the summed boundary loss. Gradients are averaged within
/// a batch; the reported epoch loss is the mean per-video loss.
pub fn train(
    model: &mut Model,
    train_set: &[SyntheticVideo],
    val_set: &[SyntheticVideo],
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    eval.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; train_set.len()];
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Vec<f64>> = model.store.ids().map(|id| vec![0.0; model.store.values(id).len()]).collect();
            for &i in batch {
                let video = &train_set[i];
                let mut tape = Tape::new();
                let r = tape.input_grid(&video.features);
                let (ps, pe) = model.record(&mut tape, r)?;
                let loss = record_boundary_loss(&mut tape, ps, pe, &video.segments)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1, batch: b });
                }
                losses[i] = value;
                let grads = tape.backward(loss)?.param_grads(&model.store);
                for (a, g) in acc.iter_mut().zip(grads) {
                    a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|x| *x *= scale);
            adam.step(&mut model.store, &acc, lr, cfg.weight_decay)?;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (val_loss, val_map_avg) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (loss, dets) = detect(model, val_set, eval)?;
            let map = map_at_tious(&dets, &ground_truth(val_set), &eval.tiou_thresholds)?;
            (loss, map.average)
        };
        history.push(EpochRecord { epoch: epoch + 1, train_loss, val_loss, val_map_avg });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::CsaConfig;
    use crate::pipeline::ModelConfig;
    use crate::synth::{generate, GenSpec};

    fn tiny() -> (Vec<SyntheticVideo>, ModelConfig) {
        let spec = GenSpec { num_videos: 12, t: 20, c_in: 8, max_segment_len: 6, segments_per_video: [1, 2], ..GenSpec::default() };
        (generate(&spec).unwrap(), ModelConfig { hidden: 8, c_out: 8, ..Default::default() })
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig { lr: 1.0, step_epoch: 7, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(6), 1.0);
        assert!((cfg.lr_at(7) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(14) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let (videos, mc) = tiny();
        let mut model = Model::new(8, 20, &mc, &CsaConfig::default(), 0).unwrap();
        let before = model.store.clone();
        let cfg = TrainConfig { epochs: 3, lr: 0.0, ..Default::default() };
        let hist = train(&mut model, &videos, &[], &cfg, &EvalConfig::default()).unwrap();
        assert_eq!(hist[0].train_loss.to_bits(), hist[2].train_loss.to_bits());
        assert_eq!(model.store, before);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (videos, mc) = tiny();
        let cfg = TrainConfig { epochs: 4, lr: 3e-3, ..Default::default() };
        let run = || {
            let mut m = Model::new(8, 20, &mc, &CsaConfig::default(), 4).unwrap();
            let h = train(&mut m, &videos[..9], &videos[9..], &cfg, &EvalConfig::default()).unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert!(h1.last().unwrap().train_loss < h1[0].train_loss);
        assert_eq!(serde_json::to_string(&h1).unwrap(), serde_json::to_string(&h2).unwrap());
        assert_eq!(m1.store.to_checkpoint(), m2.store.to_checkpoint());
    }

    #[test]
    fn huge_lr_diverges() {
        let (videos, mc) = tiny();
        let mut model = Model::new(8, 20, &mc, &CsaConfig::default(), 0).unwrap();
        let cfg = TrainConfig { epochs: 50, lr: 1e300, weight_decay: 0.0, ..Default::default() };
        let out = train(&mut model, &videos, &[], &cfg, &EvalConfig::default());
        assert!(matches!(out, Err(Error::Divergence { .. })), "{out:?}");
    }

    #[test]
    fn evaluation_has_all_metrics() {
        let (videos, mc) = tiny();
        let model = Model::new(8, 20, &mc, &CsaConfig::default(), 0).unwrap();
        let ev = evaluate(&model, &videos, &EvalConfig::default()).unwrap();
        assert_eq!(ev.map.map.len(), 5);
        assert_eq!(ev.ar.ar.len(), 100);
        assert!((0.0..=100.0).contains(&ev.ar.auc));
        assert!(ev.loss.is_finite());
    }
}
