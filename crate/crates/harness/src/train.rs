//! The training loop shared by batch experiments and the serve engine.

use handnet::data::LabeledImageSet;
use handnet::layers::softmax_xent;
use handnet::metrics::MetricsReport;
use handnet::rng::stream;
use handnet::{Error, HyperParams, Mode, Network, Optimizer, OptimizerKind, RandomSource, Tensor};

use crate::error::Result;

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub correct: usize,
    pub size: usize,
    /// True when this batch finished a pass over the training data.
    pub epoch_end: bool,
}

/// Owns a network, its optimizer state and the two random streams a run
/// consumes (shuffling and dropout).
pub struct Trainer {
    net: Network,
    optimizer: Optimizer,
    hyper: HyperParams,
    batch_size: usize,
    shuffle_rng: RandomSource,
    dropout_rng: RandomSource,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    samples_seen: usize,
}

impl Trainer {
    pub fn new(mut net: Network, kind: OptimizerKind, hyper: HyperParams, batch_size: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()).into());
        }
        net.set_mode(Mode::Train);
        let optimizer = Optimizer::new(kind, net.params());
        Ok(Trainer {
            net,
            optimizer,
            hyper,
            batch_size,
            shuffle_rng: RandomSource::with_stream(seed, stream::SHUFFLE),
            dropout_rng: RandomSource::with_stream(seed, stream::DROPOUT),
            order: Vec::new(),
            pos: 0,
            epoch: 0,
            samples_seen: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn hyper(&self) -> HyperParams {
        self.hyper
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        self.optimizer.kind()
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Completed passes over the training data.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn set_hyper(&mut self, hyper: HyperParams) -> Result<()> {
        hyper.validate()?;
        self.hyper = hyper;
        Ok(())
    }

    /// Switches update rule; the new rule starts from zeroed state.
    pub fn set_optimizer(&mut self, kind: OptimizerKind) {
        if kind != self.optimizer.kind() {
            self.optimizer = Optimizer::new(kind, self.net.params());
        }
    }

    /// One forward/backward/update on the next mini-batch of at most
    /// `limit` samples. A fresh permutation is drawn at the start of every
    /// pass; the last batch of a pass may be short.
    pub fn step(&mut self, set: &LabeledImageSet, limit: usize) -> Result<BatchOutcome> {
        if set.is_empty() {
            return Err(Error::Empty("training set").into());
        }
        if self.pos == self.order.len() {
            self.order = self.shuffle_rng.permutation(set.len());
            self.pos = 0;
        }
        let take = self.batch_size.min(limit.max(1)).min(self.order.len() - self.pos);
        let batch = set.batch(&self.order[self.pos..self.pos + take])?;
        self.net.zero_grads();
        let (loss, logits) = self
            .net
            .loss_and_backward(&batch.x, &batch.y_onehot, &mut self.dropout_rng)
            .map_err(diverged)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("loss is {loss}")).into());
        }
        self.optimizer.step(self.net.params_mut(), &self.hyper)?;
        self.pos += take;
        self.samples_seen += take;
        let epoch_end = self.pos == self.order.len();
        if epoch_end {
            self.epoch += 1;
        }
        Ok(BatchOutcome {
            loss,
            correct: count_correct(&logits, &batch.y_index),
            size: take,
            epoch_end,
        })
    }
}

fn diverged(e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged(format!("non-finite values in {what}")),
        other => other,
    }
}

pub fn is_divergence(e: &crate::error::HarnessError) -> bool {
    matches!(e, crate::error::HarnessError::Core(Error::Diverged(_) | Error::NonFinite(_)))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(logits: &Tensor) -> Vec<usize> {
    let classes = logits.dims()[1];
    logits.data().chunks_exact(classes).map(argmax).collect()
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    predictions(logits).iter().zip(labels).filter(|(p, t)| p == t).count()
}

/// Eval-mode pass over (a prefix of) a labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub report: MetricsReport,
}

const EVAL_CHUNK: usize = 250;

pub fn evaluate(net: &Network, set: &LabeledImageSet, limit: Option<usize>) -> Result<Evaluation> {
    let n = limit.unwrap_or(set.len()).min(set.len());
    if n == 0 {
        return Err(Error::Empty("evaluation set").into());
    }
    let mut preds = Vec::with_capacity(n);
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = set.batch(chunk)?;
        let logits = net.predict(&batch.x).map_err(diverged)?;
        let (loss, _) = softmax_xent(&logits, &batch.y_onehot)?;
        loss_sum += loss * chunk.len() as f64;
        preds.extend(predictions(&logits));
    }
    let truth = &set.labels[..n];
    let report = MetricsReport::from_predictions(&preds, truth)?;
    Ok(Evaluation {
        loss: loss_sum / n as f64,
        accuracy: report.confusion.correct() as f64 / n as f64,
        report,
    })
}
