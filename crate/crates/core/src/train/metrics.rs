//! Per-batch metrics and top-k accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One dataset's update within an iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub dataset: usize,
    /// Unweighted mean cross-entropy of the batch.
    pub loss: f64,
    /// Weight the loss was scaled by before backward.
    pub w: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Per-sample membership of the label in the top `k` logits. Ties rank the
/// lower class index first.
pub fn topk_hits<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<Vec<bool>> {
    let &[b, c] = logits.shape() else {
        return Err(Error::Contract(format!("expected (B, C) logits, got {:?}", logits.shape())));
    };
    if labels.len() != b {
        return Err(Error::Contract(format!("{} labels for {b} rows", labels.len())));
    }
    labels
        .iter()
        .enumerate()
        .map(|(row, &y)| {
            if y >= c {
                return Err(Error::Contract(format!("label {y} out of range for {c} classes")));
            }
            let r = &logits.data()[row * c..(row + 1) * c];
            let ahead = (0..c).filter(|&j| r[j] > r[y] || (r[j] == r[y] && j < y)).count();
            Ok(ahead < k)
        })
        .collect()
}

/// Fraction of rows whose label is in the top `k`.
pub fn topk_accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let hits = topk_hits(logits, labels, k)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
}

pub fn write_jsonl(w: &mut impl Write, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Parse JSON-lines metrics; blank lines are skipped.
pub fn read_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}
