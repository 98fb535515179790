//! `ivit export`: split a metrics log into one CSV per dataset.

use std::path::{Path, PathBuf};

use ivit_core::train::{read_jsonl, MetricsRecord};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult};
use crate::train::RESOLVED_CONFIG;

/// One CSV row: `iteration,loss,w,top1,top5`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub iteration: u64,
    pub loss: f64,
    pub w: f64,
    pub top1: f64,
    pub top5: f64,
}

impl From<&MetricsRecord> for CsvRow {
    fn from(r: &MetricsRecord) -> Self {
        CsvRow {
            iteration: r.iteration,
            loss: r.loss,
            w: r.w,
            top1: r.top1,
            top5: r.top5,
        }
    }
}

pub fn csv_name(dataset: usize) -> String {
    format!("dataset_{dataset}.csv")
}

/// Number of CSVs to write: `datasets` if given, else the dataset count of
/// a `resolved_config.json` next to the log, else one past the largest id.
fn dataset_count(metrics: &Path, records: &[MetricsRecord], datasets: Option<usize>) -> usize {
    if let Some(n) = datasets {
        return n;
    }
    let sibling = metrics.with_file_name(RESOLVED_CONFIG);
    if let Ok(cfg) = RunConfig::load(&sibling) {
        return cfg.datasets.len();
    }
    records.iter().map(|r| r.dataset + 1).max().unwrap_or(0)
}

/// Write `out_dir/dataset_<id>.csv` for every dataset; returns the paths.
pub fn cmd_export(metrics: &Path, out_dir: &Path, datasets: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let text = std::fs::read_to_string(metrics).map_err(|e| io_error(metrics, e))?;
    let records = read_jsonl(&text)?;
    let n = dataset_count(metrics, &records, datasets);
    if let Some(r) = records.iter().find(|r| r.dataset >= n) {
        return Err(ivit_core::Error::Config(format!(
            "metrics mention dataset {} but only {n} datasets were requested",
            r.dataset
        ))
        .into());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    (0..n)
        .map(|id| {
            let path = out_dir.join(csv_name(id));
            let csv_err = |source| CliError::Csv { path: path.clone(), source };
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(&path)
                .map_err(csv_err)?;
            w.write_record(["iteration", "loss", "w", "top1", "top5"]).map_err(csv_err)?;
            for r in records.iter().filter(|r| r.dataset == id) {
                w.serialize(CsvRow::from(r)).map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_error(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Read back a CSV written by [`cmd_export`].
pub fn read_csv(path: &Path) -> CliResult<Vec<CsvRow>> {
    let csv_err = |source| CliError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
