//! Config-driven experiment runs, their on-disk reports, run comparison and
//! ablation sweeps.

mod compare;
mod sweep;

pub use compare::{compare, load_report, ComparisonOutput};
pub use sweep::{preset, preset_names, run_sweep, SweepConfig, SweepRun, SweepSummary};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::CsaConfig;
use crate::error::{Error, Result};
use crate::metrics::{write_table_csv, ArCurve, MapTable, TableRow};
use crate::pipeline::{evaluate, train, EpochRecord, EvalConfig, Model, ModelConfig, TrainConfig};
use crate::synth::{generate, split, GenSpec};
use crate::tensor::Checkpoint;

pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const AR_FILE: &str = "ar_curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub gen_spec: GenSpec,
    #[serde(default)]
    pub csa: CsaConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// The `training` section. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::step_epoch")]
    pub step_epoch: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::train_frac")]
    pub train_frac: f64,
    pub seed: u64,
}

mod defaults {
    use crate::pipeline::TrainConfig;

    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn lr() -> f64 {
        TrainConfig::default().lr
    }
    pub fn weight_decay() -> f64 {
        TrainConfig::default().weight_decay
    }
    pub fn step_epoch() -> usize {
        TrainConfig::default().step_epoch
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn train_frac() -> f64 {
        0.8
    }
}

impl TrainingConfig {
    pub fn with_seed(seed: u64) -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            lr: d.lr,
            weight_decay: d.weight_decay,
            step_epoch: d.step_epoch,
            batch_size: d.batch_size,
            train_frac: defaults::train_frac(),
            seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            step_epoch: self.step_epoch,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

impl ExperimentConfig {
    /// Defaults everywhere: 250 videos split 200/50, T=50, C_in=32, CSA at the encoder output.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            name: None,
            gen_spec: GenSpec::default(),
            csa: CsaConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::with_seed(seed),
            eval: EvalConfig::default(),
            output_dir: None,
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_spec.validate()?;
        self.csa.validate()?;
        self.model.validate()?;
        self.training.train_config().validate()?;
        self.eval.validate()?;
        if !(self.training.train_frac > 0.0 && self.training.train_frac < 1.0) {
            return Err(Error::config("training.train_frac must be in (0, 1)"));
        }
        // cross-field shape checks (e.g. SE divisibility) happen at construction
        Model::new(self.gen_spec.c_in, self.gen_spec.t, &self.model, &self.csa, 0)?;
        Ok(())
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{:?}", self.csa.variant))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
    pub map: MapTable,
    pub ar: ArCurve,
}

/// Evaluation conventions, recorded next to the numbers they shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub map_matching: String,
    pub ar_tious: Vec<f64>,
    pub auc: String,
}

impl Conventions {
    fn for_eval(eval: &EvalConfig) -> Self {
        Self {
            map_matching: "class-agnostic proposals; greedy match to the unmatched GT with highest tIoU; exact area under the PR step curve"
                .into(),
            ar_tious: eval.ar_tious.clone(),
            auc: "trapezoidal area under AR(AN) divided by the AN span, in percent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub parameter_count: usize,
    pub attention_parameter_count: usize,
    pub train_videos: usize,
    pub val_videos: usize,
    pub history: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub conventions: Conventions,
    pub wall_clock_seconds: f64,
}

pub struct RunOutput {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
}

/// Generates the data, trains the configured model and evaluates it on the
/// validation split. Deterministic in everything but `wall_clock_seconds`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    let videos = generate(&config.gen_spec)?;
    let (train_set, val_set) = split(&videos, config.training.train_frac, config.training.seed)?;
    let mut model = Model::new(config.gen_spec.c_in, config.gen_spec.t, &config.model, &config.csa, config.training.seed)?;
    let history = train(&mut model, &train_set, &val_set, &config.training.train_config(), &config.eval)?;
    let eval = evaluate(&model, &val_set, &config.eval)?;
    let report = RunReport {
        config: config.clone(),
        parameter_count: model.parameter_count(),
        attention_parameter_count: model.attention_parameter_count(),
        train_videos: train_set.len(),
        val_videos: val_set.len(),
        final_metrics: FinalMetrics {
            train_loss: history.last().map_or(f64::NAN, |h| h.train_loss),
            val_loss: eval.loss,
            map: eval.map,
            ar: eval.ar,
        },
        history,
        conventions: Conventions::for_eval(&config.eval),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { report, checkpoint: model.store.to_checkpoint() })
}

/// One metrics row: the run label, every threshold, "Avg mAP" and "AUC".
pub fn metrics_row(report: &RunReport, label: &str) -> TableRow {
    TableRow {
        keys: vec![label.to_string()],
        map: report.final_metrics.map.clone(),
        auc: Some(report.final_metrics.ar.auc),
    }
}

pub fn write_losses_csv<W: Write>(out: W, runs: &[(&str, &RunReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "epoch", "train_loss", "val_loss", "val_mAP_avg"])?;
    for (label, report) in runs {
        for h in &report.history {
            w.write_record([
                label.to_string(),
                h.epoch.to_string(),
                format!("{:.8}", h.train_loss),
                format!("{:.8}", h.val_loss),
                format!("{:.6}", h.val_map_avg),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every run artefact into `dir`, creating it if needed.
pub fn write_outputs(dir: impl AsRef<Path>, output: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let report = &output.report;
    let label = report.config.label();

    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;

    let mut history = String::new();
    for h in &report.history {
        history.push_str(&serde_json::to_string(h)?);
        history.push('\n');
    }
    fs::write(dir.join(HISTORY_FILE), history)?;

    write_table_csv(fs::File::create(dir.join(METRICS_FILE))?, &["run"], &[metrics_row(report, &label)])?;
    write_losses_csv(fs::File::create(dir.join(LOSSES_FILE))?, &[(&label, report)])?;

    let mut ar = csv::Writer::from_path(dir.join(AR_FILE))?;
    ar.write_record(["AN", "AR"])?;
    for (an, v) in report.final_metrics.ar.an.iter().zip(&report.final_metrics.ar.ar) {
        ar.write_record([an.to_string(), format!("{v:.6}")])?;
    }
    ar.flush()?;

    output.checkpoint.save(dir.join(CHECKPOINT_FILE))?;
    Ok(())
}
