//! Training metrics files: one JSON document per run with the seed, the
//! per-epoch loss trace, best-epoch selection, test MSE (fine-tuning only),
//! and wall-clock time.
//!
//! Every field except `wall_clock_seconds` is a deterministic function of
//! the config and seed; consumers comparing runs should ignore the
//! wall-clock field.

use crate::error::{CliError, Result};
use boltzgen_core::train::EpochLog;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpochEntry {
    pub epoch: usize,
    /// Absent on the epoch-0 entry (initial validation pass, no training).
    pub train_loss: Option<f64>,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Present after fine-tuning: MSE of the best-epoch model on the held-out
    /// test split.
    pub test_mse: Option<f64>,
    pub wall_clock_seconds: f64,
    pub epochs: Vec<EpochEntry>,
}

impl MetricsFile {
    pub fn new(
        seed: u64,
        log: &[EpochLog],
        best_epoch: usize,
        best_valid_loss: f64,
        test_mse: Option<f64>,
        wall_clock_seconds: f64,
    ) -> Self {
        MetricsFile {
            seed,
            best_epoch,
            best_valid_loss,
            test_mse,
            wall_clock_seconds,
            epochs: log
                .iter()
                .map(|e| EpochEntry {
                    epoch: e.epoch,
                    train_loss: e.train_loss,
                    valid_loss: e.valid_loss,
                })
                .collect(),
        }
    }
}

pub fn save_metrics(metrics: &MetricsFile, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| CliError::Data(format!("cannot serialize metrics: {e}")))?;
    std::fs::write(path, json.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write metrics {}: {e}", path.display())))
}

pub fn load_metrics(path: &Path) -> Result<MetricsFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read metrics {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("metrics {}: {e}", path.display())))
}
