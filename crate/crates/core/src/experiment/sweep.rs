use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{run, write_outputs, ExperimentConfig, RunReport};
use crate::error::{Error, Result};
use crate::metrics::{write_table_csv, TableRow};

/// A list of runs sharing a base config, summarised as one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Also the CSV file stem.
    pub name: String,
    pub key_columns: Vec<String>,
    /// Full experiment config every run starts from.
    pub base: Value,
    pub runs: Vec<SweepRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub label: String,
    /// Values for the key columns, in order.
    pub keys: Vec<String>,
    /// Merged into the base config (objects merge recursively, anything else replaces).
    #[serde(default)]
    pub overrides: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub table_path: PathBuf,
    pub run_dirs: Vec<PathBuf>,
    pub reports: Vec<RunReport>,
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p.clone(),
    }
}

fn slug(index: usize, label: &str) -> String {
    let body: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let body = body.split('-').filter(|s| !s.is_empty()).collect::<Vec<_>>().join("-");
    format!("{:02}-{body}", index + 1)
}

impl SweepConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read sweep {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid sweep {}: {e}", path.display())))
    }

    /// Every run's config, validated before anything is trained.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        if self.runs.is_empty() {
            return Err(Error::config(format!("sweep {} has no runs", self.name)));
        }
        self.runs
            .iter()
            .map(|r| {
                if r.keys.len() != self.key_columns.len() {
                    return Err(Error::config(format!(
                        "sweep run {:?} has {} keys for {} key columns",
                        r.label,
                        r.keys.len(),
                        self.key_columns.len()
                    )));
                }
                let mut value = self.base.clone();
                merge(&mut value, &r.overrides);
                merge(&mut value, &json!({ "name": r.label }));
                ExperimentConfig::from_value(value)
                    .map_err(|e| Error::config(format!("sweep run {:?}: {e}", r.label)))
            })
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        merge(&mut self.base, &json!({ "training": { "seed": seed } }));
        self
    }
}

/// Runs every configuration (up to `jobs` at a time, each in its own output
/// subdirectory) and writes `<out>/<name>.csv`.
pub fn run_sweep(sweep: &SweepConfig, out_dir: impl AsRef<Path>, jobs: usize) -> Result<SweepSummary> {
    let configs = sweep.configs()?;
    let out_dir = out_dir.as_ref();
    let run_dirs: Vec<PathBuf> = sweep.runs.iter().enumerate().map(|(i, r)| out_dir.join(&sweep.name).join(slug(i, &r.label))).collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let outcome = run(&configs[i]).and_then(|out| {
                    write_outputs(&run_dirs[i], &out)?;
                    Ok(out.report)
                });
                results.lock().expect("no panics while holding the lock")[i] = Some(outcome);
            });
        }
    });

    let reports: Vec<RunReport> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every run was attempted"))
        .collect::<Result<_>>()?;

    let rows: Vec<TableRow> = sweep
        .runs
        .iter()
        .zip(&reports)
        .map(|(r, rep)| TableRow { keys: r.keys.clone(), map: rep.final_metrics.map.clone(), auc: None })
        .collect();
    fs::create_dir_all(out_dir)?;
    let table_path = out_dir.join(format!("{}.csv", sweep.name));
    let keys: Vec<&str> = sweep.key_columns.iter().map(String::as_str).collect();
    write_table_csv(fs::File::create(&table_path)?, &keys, &rows)?;
    Ok(SweepSummary { table_path, run_dirs, reports })
}

pub fn preset_names() -> &'static [&'static str] {
    &["self-attention", "design", "branches", "kernel-depth", "location"]
}

fn run_entry(label: &str, keys: &[&str], overrides: Value) -> SweepRun {
    SweepRun { label: label.into(), keys: keys.iter().map(|k| k.to_string()).collect(), overrides }
}

/// The ablation layouts: self-attention baselines, design variants, branch
/// toggles, kernel size and conv count, and insertion point.
pub fn preset(name: &str, base: &ExperimentConfig) -> Result<SweepConfig> {
    let module = |rows: Vec<(&str, Value)>| -> (Vec<String>, Vec<SweepRun>) {
        let runs = rows.into_iter().map(|(label, o)| run_entry(label, &[label], o)).collect();
        (vec!["Module".into()], runs)
    };
    let (key_columns, runs) = match name {
        "self-attention" => module(vec![
            ("Baseline", json!({"csa": {"variant": "NONE"}})),
            ("SE", json!({"csa": {"variant": "SE_BASELINE"}})),
            ("CSA", json!({"csa": {"variant": "CSA", "conv_blocks": 2}})),
        ]),
        "design" => module(vec![
            ("FF-CSA", json!({"csa": {"variant": "FF_CSA"}})),
            ("CSA (1-Conv)", json!({"csa": {"variant": "CSA", "conv_blocks": 1}})),
        ]),
        "branches" => {
            let one = |c: bool, t: bool| json!({"csa": {"variant": "CSA", "conv_blocks": 1, "use_channel": c, "use_temporal": t}});
            (
                vec!["Channel".into(), "Temporal".into()],
                vec![
                    run_entry("channel-only", &["✓", ""], one(true, false)),
                    run_entry("temporal-only", &["", "✓"], one(false, true)),
                    run_entry("channel+temporal", &["✓", "✓"], one(true, true)),
                ],
            )
        }
        "kernel-depth" => {
            let grid = |b: usize, k: usize| json!({"csa": {"variant": "CSA", "conv_blocks": b, "kernel_size": k}});
            module(vec![
                ("k=1", grid(1, 1)),
                ("k=3", grid(1, 3)),
                ("k=5", grid(1, 5)),
                ("1-Conv", grid(1, 3)),
                ("2-Conv", grid(2, 3)),
                ("3-Conv", grid(3, 3)),
            ])
        }
        "location" => {
            let at = |loc: &str| json!({"csa": {"variant": "CSA", "conv_blocks": 2, "location": loc}});
            module(vec![("Start-CSA", at("start")), ("Middle-CSA", at("middle")), ("CSA (2-Conv)", at("end"))])
        }
        other => {
            return Err(Error::config(format!("unknown preset {other:?}; expected one of {:?}", preset_names())));
        }
    };
    let mut base_value = serde_json::to_value(base)?;
    if let Value::Object(map) = &mut base_value {
        map.remove("name");
        map.remove("output_dir");
    }
    Ok(SweepConfig { name: name.into(), key_columns, base: base_value, runs })
}
