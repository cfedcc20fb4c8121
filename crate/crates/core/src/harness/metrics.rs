//! Per-epoch metric rows and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row per epoch. Loss columns are means over the epoch's steps;
/// `train_metric` and `eval_metric` are accuracy (classification) or mean
/// Dice (segmentation) measured after the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub task_loss: f64,
    pub kl_term: f64,
    pub lambda: f64,
    pub total: f64,
    pub train_metric: f64,
    pub eval_metric: f64,
}

/// Loss values of a single optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub task_loss: f64,
    pub kl_term: f64,
    pub total: f64,
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
