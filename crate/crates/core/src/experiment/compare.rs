use std::fs;
use std::path::{Path, PathBuf};

use super::{metrics_row, write_losses_csv, RunReport, REPORT_FILE};
use crate::error::{Error, Result};
use crate::metrics::{write_table_csv, TableRow};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_LOSSES_FILE: &str = "losses.csv";

/// Accepts a report file or a run directory containing one.
pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)
        .map_err(|e| Error::Comparison(format!("cannot read report {}: {e}", file.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Comparison(format!("{} is not a run report: {e}", file.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutput {
    pub labels: Vec<String>,
    pub rows: Vec<TableRow>,
    pub table_path: PathBuf,
    pub losses_path: PathBuf,
}

fn label_for(path: &Path, report: &RunReport) -> String {
    if let Some(name) = &report.config.name {
        return name.clone();
    }
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    dir.and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| report.config.label())
}

/// Writes one metrics row per report (in input order) plus the per-epoch loss
/// curves of every report.
pub fn compare(paths: &[PathBuf], out_dir: impl AsRef<Path>) -> Result<ComparisonOutput> {
    if paths.len() < 2 {
        return Err(Error::Comparison(format!("need at least 2 reports, got {}", paths.len())));
    }
    let reports: Vec<RunReport> = paths.iter().map(load_report).collect::<Result<_>>()?;
    let reference = &reports[0].final_metrics.map.thresholds;
    for (path, r) in paths.iter().zip(&reports).skip(1) {
        if &r.final_metrics.map.thresholds != reference {
            return Err(Error::Comparison(format!(
                "{} uses tIoU thresholds {:?}, expected {:?}",
                path.display(),
                r.final_metrics.map.thresholds,
                reference
            )));
        }
    }
    let labels: Vec<String> = paths.iter().zip(&reports).map(|(p, r)| label_for(p, r)).collect();
    let rows: Vec<TableRow> = reports.iter().zip(&labels).map(|(r, l)| metrics_row(r, l)).collect();

    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let table_path = out_dir.join(COMPARISON_FILE);
    let losses_path = out_dir.join(COMPARISON_LOSSES_FILE);
    write_table_csv(fs::File::create(&table_path)?, &["run"], &rows)?;
    let runs: Vec<(&str, &RunReport)> = labels.iter().map(String::as_str).zip(&reports).collect();
    write_losses_csv(fs::File::create(&losses_path)?, &runs)?;
    Ok(ComparisonOutput { labels, rows, table_path, losses_path })
}
