//! The five experiments.
//!
//! * exp1: MLP learning-rate sweep, per-epoch train and test error.
//! * exp2: hidden-width sweep for two MLPs and the MNIST CNN.
//! * exp3: per-digit precision/recall/F1 of the MNIST CNN for several seeds.
//! * exp4: CIFAR-10 CNN, plain SGD against momentum SGD.
//! * exp5: CIFAR-10 CNN with dropout, momentum SGD against Adadelta.

use std::time::Instant;

use handnet::data::LabeledImageSet;
use handnet::{Architecture, HyperParams, OptimizerKind};

use crate::config::{sgd_hyper, ExperimentConfig};
use crate::datasets::Splits;
use crate::error::Result;
use crate::record::{Divergence, EpochPoint, RunRecord, SeriesPoint};
use crate::train::{evaluate, is_divergence, BatchOutcome, Trainer};

/// Training images used for the untrained series point.
const PROBE: usize = 1_000;

pub const PAPER_LRS: [f64; 4] = [1.0, 0.5, 0.1, 0.01];
pub const PAPER_WIDTHS: [usize; 8] = [196, 392, 784, 1568, 3136, 6272, 9408, 12544];
/// Epochs per width-sweep run; keeps the widest CNN within desk budgets.
pub const WIDTH_SWEEP_EPOCHS: usize = 5;
pub const SWEEP_SEEDS: [u64; 3] = [7, 17, 42];
pub const DIGIT_SEEDS: [u64; 2] = [7, 17];

fn new_trainer(cfg: &ExperimentConfig) -> Result<Trainer> {
    cfg.validate()?;
    let net = cfg.architecture.build(cfg.seed)?;
    Trainer::new(net, cfg.optimizer, cfg.hyper, cfg.batch_size, cfg.seed)
}

fn initial_point(t: &Trainer, train: &LabeledImageSet, test: &LabeledImageSet, slice: Option<usize>) -> Result<SeriesPoint> {
    let tr = evaluate(t.network(), train, Some(PROBE))?;
    let te = evaluate(t.network(), test, slice)?;
    Ok(SeriesPoint {
        samples_seen: 0,
        loss: tr.loss,
        train_acc: tr.accuracy,
        test_acc: te.accuracy,
    })
}

#[derive(Default)]
struct Window {
    loss: f64,
    correct: usize,
    n: usize,
}

impl Window {
    fn add(&mut self, o: &BatchOutcome) {
        self.loss += o.loss * o.size as f64;
        self.correct += o.correct;
        self.n += o.size;
    }

    fn take(&mut self) -> (f64, f64) {
        let out = (self.loss / self.n as f64, self.correct as f64 / self.n as f64);
        *self = Window::default();
        out
    }
}

/// Epoch-based run: `cfg.epochs` passes over `train`, full test evaluation
/// after each.
pub fn run_epochs(cfg: &ExperimentConfig, label: &str, train: &LabeledImageSet, test: &LabeledImageSet) -> Result<RunRecord> {
    let start = Instant::now();
    let mut rec = RunRecord::new(label, cfg.clone());
    let mut t = new_trainer(cfg)?;
    rec.series.push(initial_point(&t, train, test, cfg.eval_slice)?);
    let mut last_report = Some(evaluate(t.network(), test, cfg.eval_slice)?.report);
    'epochs: for epoch in 1..=cfg.epochs {
        let mut w = Window::default();
        loop {
            match t.step(train, usize::MAX) {
                Ok(o) => {
                    w.add(&o);
                    if o.epoch_end {
                        break;
                    }
                }
                Err(e) if is_divergence(&e) => {
                    rec.diverged = Some(Divergence {
                        samples_seen: t.samples_seen() as u64,
                        reason: e.to_string(),
                    });
                    last_report = None;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let (train_loss, running_acc) = w.take();
        let te = evaluate(t.network(), test, cfg.eval_slice)?;
        let train_error = if cfg.track_train_error {
            Some(evaluate(t.network(), train, None)?.report.error_rate)
        } else {
            None
        };
        rec.epochs.push(EpochPoint {
            epoch,
            samples_seen: t.samples_seen() as u64,
            train_loss,
            running_train_error: 100.0 * (1.0 - running_acc),
            train_error,
            test_error: te.report.error_rate,
        });
        rec.series.push(SeriesPoint {
            samples_seen: t.samples_seen() as u64,
            loss: train_loss,
            train_acc: running_acc,
            test_acc: te.accuracy,
        });
        last_report = Some(te.report);
    }
    rec.final_report = last_report;
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Sample-budget run: trains on exactly `cfg.sample_budget` samples,
/// adding a series point every `cfg.eval_every` samples (test accuracy on
/// the first `cfg.eval_slice` test images). The final report covers the
/// whole test set.
pub fn run_budget(cfg: &ExperimentConfig, label: &str, train: &LabeledImageSet, test: &LabeledImageSet) -> Result<RunRecord> {
    let start = Instant::now();
    let budget = cfg.sample_budget.unwrap_or(0);
    let mut rec = RunRecord::new(label, cfg.clone());
    let mut t = new_trainer(cfg)?;
    rec.series.push(initial_point(&t, train, test, cfg.eval_slice)?);
    let mut w = Window::default();
    let mut since = 0;
    while t.samples_seen() < budget {
        let limit = (budget - t.samples_seen()).min(cfg.eval_every - since);
        match t.step(train, limit) {
            Ok(o) => {
                w.add(&o);
                since += o.size;
            }
            Err(e) if is_divergence(&e) => {
                rec.diverged = Some(Divergence {
                    samples_seen: t.samples_seen() as u64,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        if since == cfg.eval_every || t.samples_seen() == budget {
            let (loss, acc) = w.take();
            let te = evaluate(t.network(), test, cfg.eval_slice)?;
            rec.series.push(SeriesPoint {
                samples_seen: t.samples_seen() as u64,
                loss,
                train_acc: acc,
                test_acc: te.accuracy,
            });
            since = 0;
        }
    }
    if rec.diverged.is_none() {
        rec.final_report = Some(evaluate(t.network(), test, None)?.report);
    }
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn training_subset(cfg: &ExperimentConfig, train: &LabeledImageSet) -> Result<LabeledImageSet> {
    Ok(train.head(cfg.subset.resolve(train.len()))?)
}

pub fn lr_label(lr: f64) -> String {
    format!("lr={lr}")
}

/// Learning-rate sweep over MLP runs; one run per (seed, lr).
#[derive(Clone, Debug, PartialEq)]
pub struct LrSweep {
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed-major, lr-minor.
    pub runs: Vec<RunRecord>,
}

impl LrSweep {
    pub fn run(&self, seed_idx: usize, lr_idx: usize) -> &RunRecord {
        &self.runs[seed_idx * self.lrs.len() + lr_idx]
    }

    /// Learning rate with the lowest final test error for a seed; diverged
    /// runs never win.
    pub fn best_lr(&self, seed_idx: usize) -> Option<f64> {
        (0..self.lrs.len())
            .filter_map(|i| self.run(seed_idx, i).final_test_error().map(|e| (i, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| self.lrs[i])
    }

    /// Rows are epochs, columns learning rates; `None` after divergence.
    pub fn table(&self, seed_idx: usize, train: bool) -> Vec<Vec<Option<f64>>> {
        let epochs = self.runs.first().map_or(0, |r| r.config.epochs);
        (1..=epochs)
            .map(|e| {
                (0..self.lrs.len())
                    .map(|i| {
                        let p = self.run(seed_idx, i).epochs.get(e - 1)?;
                        if train {
                            p.train_error
                        } else {
                            Some(p.test_error)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn run_lr_sweep(
    base: &ExperimentConfig,
    lrs: &[f64],
    seeds: &[u64],
    splits: &Splits,
    on_run: &mut dyn FnMut(&RunRecord),
) -> Result<LrSweep> {
    let train = training_subset(base, &splits.train)?;
    let mut runs = Vec::new();
    for &seed in seeds {
        for &lr in lrs {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.hyper.learning_rate = lr;
            let rec = run_epochs(&cfg, &format!("{}_seed={seed}", lr_label(lr)), &train, &splits.test)?;
            on_run(&rec);
            runs.push(rec);
        }
    }
    Ok(LrSweep {
        lrs: lrs.to_vec(),
        seeds: seeds.to_vec(),
        runs,
    })
}

/// The three models compared at each hidden width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthModels {
    pub mlp_lr: f64,
    pub best_lr: f64,
    pub cnn_lr: f64,
}

impl Default for WidthModels {
    fn default() -> Self {
        WidthModels {
            mlp_lr: 0.5,
            best_lr: 0.1,
            cnn_lr: 0.1,
        }
    }
}

pub const WIDTH_COLUMNS: [&str; 3] = ["MLP (lr=0.5)", "MLP (lr=best)", "CNN"];

#[derive(Clone, Debug, PartialEq)]
pub struct WidthSweep {
    pub widths: Vec<usize>,
    pub models: WidthModels,
    /// Width-major; per width: MLP at `mlp_lr`, MLP at `best_lr`, CNN.
    pub runs: Vec<RunRecord>,
}

impl WidthSweep {
    pub fn run(&self, width_idx: usize, col: usize) -> &RunRecord {
        &self.runs[width_idx * 3 + col]
    }

    /// Final test error per width (rows) and model (columns).
    pub fn table(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.widths.len())
            .map(|w| (0..3).map(|c| self.run(w, c).final_test_error()).collect())
            .collect()
    }

    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.widths.len()).map(|w| self.run(w, col).final_test_error()).collect()
    }
}

pub fn width_configs(base: &ExperimentConfig, width: usize, models: WidthModels) -> [ExperimentConfig; 3] {
    let mut a = base.clone();
    a.architecture = Architecture::Mlp { hidden: width };
    a.hyper = sgd_hyper(models.mlp_lr);
    let mut b = a.clone();
    b.hyper = sgd_hyper(models.best_lr);
    let mut c = base.clone();
    c.architecture = Architecture::MnistCnn { hidden: width };
    c.hyper = sgd_hyper(models.cnn_lr);
    [a, b, c]
}

pub fn run_width_sweep(
    base: &ExperimentConfig,
    widths: &[usize],
    models: WidthModels,
    splits: &Splits,
    on_run: &mut dyn FnMut(&RunRecord),
) -> Result<WidthSweep> {
    let train = training_subset(base, &splits.train)?;
    let mut runs = Vec::new();
    for &width in widths {
        for (col, cfg) in width_configs(base, width, models).iter().enumerate() {
            let name = ["mlp", "mlp_best", "cnn"][col];
            let rec = run_epochs(cfg, &format!("{name}_width={width}"), &train, &splits.test)?;
            on_run(&rec);
            runs.push(rec);
        }
    }
    Ok(WidthSweep {
        widths: widths.to_vec(),
        models,
        runs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerDigit {
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
}

impl PerDigit {
    /// Digit with the highest F1 for each seed (`None` if diverged).
    pub fn best_digits(&self) -> Vec<Option<usize>> {
        self.runs
            .iter()
            .map(|r| r.final_report.as_ref().map(|m| m.best_f1_class()))
            .collect()
    }
}

pub fn run_per_digit(
    base: &ExperimentConfig,
    seeds: &[u64],
    splits: &Splits,
    on_run: &mut dyn FnMut(&RunRecord),
) -> Result<PerDigit> {
    let train = training_subset(base, &splits.train)?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let rec = run_epochs(&cfg, &format!("seed={seed}"), &train, &splits.test)?;
        on_run(&rec);
        runs.push(rec);
    }
    Ok(PerDigit {
        seeds: seeds.to_vec(),
        runs,
    })
}

/// An optimizer setting compared in the CIFAR experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub optimizer: OptimizerKind,
    pub hyper: HyperParams,
}

impl Variant {
    pub fn sgd(lr: f64) -> Self {
        Variant {
            label: "sgd".into(),
            optimizer: OptimizerKind::Sgd,
            hyper: sgd_hyper(lr),
        }
    }

    pub fn momentum(lr: f64, momentum: f64) -> Self {
        Variant {
            label: "sgd+".into(),
            optimizer: OptimizerKind::Momentum,
            hyper: HyperParams {
                learning_rate: lr,
                momentum,
                ..Default::default()
            },
        }
    }

    /// Adadelta has no learning rate of its own; 1.0 is recorded.
    pub fn adadelta() -> Self {
        Variant {
            label: "adadelta".into(),
            optimizer: OptimizerKind::Adadelta,
            hyper: HyperParams {
                learning_rate: 1.0,
                momentum: 0.0,
                ..Default::default()
            },
        }
    }
}

pub fn run_cifar(
    base: &ExperimentConfig,
    variants: &[Variant],
    splits: &Splits,
    on_run: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    let train = training_subset(base, &splits.train)?;
    let mut out = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.optimizer = v.optimizer;
        cfg.hyper = v.hyper;
        let rec = run_budget(&cfg, &v.label, &train, &splits.test)?;
        on_run(&rec);
        out.push(rec);
    }
    Ok(out)
}
