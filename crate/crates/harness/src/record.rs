//! Run records: everything a finished (or diverged) run produced.

use handnet::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// One point of a training curve. Accuracies are fractions in `[0, 1]`.
///
/// `loss` and `train_acc` are averaged over the training batches since the
/// previous point (train mode, so dropout is active). The point at
/// `samples_seen = 0` has no batches behind it and is measured in eval mode
/// on the leading training images instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub samples_seen: u64,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// End-of-epoch summary. Error rates are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub samples_seen: u64,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Error over the epoch's batches as they were trained on.
    pub running_train_error: f64,
    /// Eval-mode error on the whole training subset, if tracked.
    pub train_error: Option<f64>,
    pub test_error: f64,
}

/// A hyperparameter change applied by the serve engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperChange {
    pub samples_seen: u64,
    pub key: String,
    pub value: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub samples_seen: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Short run name, unique within an experiment (`lr=0.1_seed=7`).
    pub label: String,
    pub config: ExperimentConfig,
    pub series: Vec<SeriesPoint>,
    pub epochs: Vec<EpochPoint>,
    /// Test-set report of the final network; absent if the run diverged.
    pub final_report: Option<MetricsReport>,
    pub hyper_log: Vec<HyperChange>,
    pub diverged: Option<Divergence>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(label: impl Into<String>, config: ExperimentConfig) -> Self {
        RunRecord {
            label: label.into(),
            config,
            series: Vec::new(),
            epochs: Vec::new(),
            final_report: None,
            hyper_log: Vec::new(),
            diverged: None,
            wall_clock_secs: 0.0,
        }
    }

    /// Test error after the last completed epoch, `None` if diverged.
    pub fn final_test_error(&self) -> Option<f64> {
        if self.diverged.is_some() {
            return None;
        }
        self.final_report.as_ref().map(|r| r.error_rate)
    }

    pub fn max_train_acc(&self) -> f64 {
        self.series.iter().map(|p| p.train_acc).fold(0.0, f64::max)
    }

    /// Mean training accuracy over the run's sample window (trapezoid rule
    /// over `samples_seen`, normalized by the window length).
    pub fn train_acc_auc(&self) -> f64 {
        let s = &self.series;
        match s.len() {
            0 => 0.0,
            1 => s[0].train_acc,
            _ => {
                let span = (s[s.len() - 1].samples_seen - s[0].samples_seen) as f64;
                let area: f64 = s
                    .windows(2)
                    .map(|w| (w[1].samples_seen - w[0].samples_seen) as f64 * (w[0].train_acc + w[1].train_acc) / 2.0)
                    .sum();
                area / span
            }
        }
    }
}
