use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csa_core::experiment::{self, preset, preset_names, ExperimentConfig, SweepConfig};
use csa_core::metrics::{self, activitynet_average_tious, default_an_values, THUMOS_TIOUS};
use csa_core::synth::Dataset;
use csa_core::{gradcheck, Error};

/// Exit code for configuration errors.
const EXIT_CONFIG: u8 = 2;
/// Exit code for a diverged training run.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "csa", version, about = "Class-semantics attention experiments on synthetic temporal features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate two or more run reports side by side.
    Compare {
        /// report.json files or run directories.
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every op and attention variant.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Print per-case errors.
        #[arg(long)]
        verbose: bool,
    },
    /// Run ablation sweeps, one CSV per table.
    Sweep {
        /// Built-in layouts (self-attention, design, branches, kernel-depth, location).
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// Custom sweep files.
        #[arg(long = "sweep")]
        sweeps: Vec<PathBuf>,
        /// Base experiment config for presets; defaults are used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as JSON.
    Generate {
        /// Experiment config whose `gen_spec` is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth (both JSON lists).
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// mAP thresholds; THUMOS-style by default.
        #[arg(long, value_delimiter = ',')]
        tious: Vec<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => 1,
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> csa_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> csa_core::Result<()> {
    let cfg = load_config(&config, seed)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    let output = experiment::run(&cfg)?;
    experiment::write_outputs(&out, &output)?;
    let r = &output.report;
    for h in &r.history {
        println!(
            "epoch {:>2}  train_loss {:.5}  val_loss {:.5}  val_mAP_avg {:.4}",
            h.epoch, h.train_loss, h.val_loss, h.val_map_avg
        );
    }
    let m = &r.final_metrics.map;
    let cols: Vec<String> = m.thresholds.iter().zip(&m.map).map(|(t, v)| format!("{t}:{v:.4}")).collect();
    println!("mAP {}  avg {:.4}  AUC {:.2}", cols.join(" "), m.average, r.final_metrics.ar.auc);
    println!("parameters {} (attention {})", r.parameter_count, r.attention_parameter_count);
    println!("wrote {}", out.display());
    Ok(())
}

fn sweep(
    presets: Vec<String>,
    files: Vec<PathBuf>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    jobs: usize,
    out: PathBuf,
) -> csa_core::Result<()> {
    if presets.is_empty() && files.is_empty() {
        return Err(Error::Config(format!("pass --preset ({}) or --sweep <file>", preset_names().join(", "))));
    }
    let base = match &config {
        Some(path) => load_config(path, seed)?,
        None => ExperimentConfig::with_seed(seed.unwrap_or(0)),
    };
    let mut sweeps = Vec::new();
    for name in &presets {
        sweeps.push(preset(name, &base)?);
    }
    for file in &files {
        let s = SweepConfig::load(file)?;
        sweeps.push(match seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        });
    }
    // reject any bad config before the first run starts
    for s in &sweeps {
        s.configs()?;
    }
    for s in &sweeps {
        let summary = experiment::run_sweep(s, &out, jobs)?;
        println!("{}: {} runs -> {}", s.name, summary.reports.len(), summary.table_path.display());
    }
    Ok(())
}

fn generate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> csa_core::Result<()> {
    let mut spec = match &config {
        Some(path) => ExperimentConfig::load(path)?.gen_spec,
        None => Default::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let ds = Dataset::generate(spec)?;
    ds.save(&out)?;
    println!("wrote {} videos to {}", ds.videos.len(), out.display());
    Ok(())
}

fn evaluate(detections: PathBuf, ground_truth: PathBuf, tious: Vec<f64>) -> csa_core::Result<()> {
    let dets = metrics::load_detections(&detections)?;
    let gts = metrics::load_ground_truth(&ground_truth)?;
    let tious = if tious.is_empty() { THUMOS_TIOUS.to_vec() } else { tious };
    let map = metrics::map_at_tious(&dets, &gts, &tious)?;
    let ar = metrics::ar_at_an(&dets, &gts, &default_an_values(), &activitynet_average_tious())?;
    let summary = serde_json::json!({ "map": map, "ar_at_1": ar.at(1), "ar_at_100": ar.at(100), "auc": ar.auc });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn gradcheck(seed: u64, count: u64, verbose: bool) -> csa_core::Result<bool> {
    let mut all_passed = true;
    for s in seed..seed + count.max(1) {
        let report = gradcheck::run(s)?;
        if verbose {
            for c in &report.cases {
                println!("  {:<24} {:>5} scalars  {:>3} skipped  max rel err {:.3e}", c.name, c.checked, c.skipped, c.max_rel_error);
            }
        }
        println!(
            "seed {s}: {} cases, max rel err {:.3e} (tolerance {:.0e}) {}",
            report.cases.len(),
            report.max_rel_error,
            report.tolerance,
            if report.passed { "ok" } else { "FAILED" }
        );
        all_passed &= report.passed;
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => run(config, out, seed),
        Command::Compare { reports, out } => experiment::compare(&reports, &out).map(|c| {
            println!("compared {} runs -> {}, {}", c.labels.len(), c.table_path.display(), c.losses_path.display());
        }),
        Command::Gradcheck { seed, count, verbose } => {
            return match gradcheck(seed, count, verbose) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(1),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
        Command::Sweep { presets, sweeps, config, seed, jobs, out } => sweep(presets, sweeps, config, seed, jobs, out),
        Command::Generate { config, seed, out } => generate(config, seed, out),
        Command::Evaluate { detections, ground_truth, tious } => evaluate(detections, ground_truth, tious),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
