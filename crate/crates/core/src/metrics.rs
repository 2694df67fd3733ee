//! Classification metrics, all reported in percent.
//!
//! Precision, recall and F1 use the convention that a zero denominator
//! yields 0; the report records which classes hit that case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// `100 · mismatches / N`.
pub fn error_rate(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("error_rate needs at least one prediction"));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(100.0 * wrong as f64 / pred.len() as f64)
}

/// `counts[true][pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl ConfusionMatrix {
    pub fn from_predictions(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions vs {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= NUM_CLASSES {
                return Err(Error::LabelRange(p));
            }
            if t >= NUM_CLASSES {
                return Err(Error::LabelRange(t));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }
}

/// Alias for [`ConfusionMatrix::from_predictions`].
pub fn confusion(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_predictions(pred, truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when one of the three hit a zero denominator.
    pub undefined: bool,
}

/// Precision, recall and F1 for one class, in percent.
pub fn prf1(cm: &ConfusionMatrix, class: usize) -> ClassScores {
    let tp = cm.counts[class][class] as f64;
    let predicted = cm.predicted_count(class) as f64;
    let actual = cm.true_count(class) as f64;
    let mut undefined = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            undefined = true;
            0.0
        } else {
            100.0 * num / den
        }
    };
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = ratio(2.0 * precision * recall / 100.0, precision + recall);
    ClassScores {
        precision,
        recall,
        f1,
        undefined,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub error_rate: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Classes where some score hit a zero denominator.
    pub undefined_classes: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let samples = cm.total();
        if samples == 0 {
            return Err(Error::Empty("metrics report needs at least one sample"));
        }
        let scores: Vec<ClassScores> = (0..NUM_CLASSES).map(|c| prf1(&cm, c)).collect();
        let mean = |f: fn(&ClassScores) -> f64| scores.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
        Ok(MetricsReport {
            samples,
            error_rate: 100.0 * (samples - cm.correct()) as f64 / samples as f64,
            precision: scores.iter().map(|s| s.precision).collect(),
            recall: scores.iter().map(|s| s.recall).collect(),
            f1: scores.iter().map(|s| s.f1).collect(),
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            undefined_classes: (0..NUM_CLASSES).filter(|&c| scores[c].undefined).collect(),
            confusion: cm,
        })
    }

    pub fn from_predictions(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Self::from_confusion(ConfusionMatrix::from_predictions(pred, truth)?)
    }

    /// Micro-averaged recall (= accuracy) in percent.
    pub fn micro_recall(&self) -> f64 {
        100.0 * self.confusion.correct() as f64 / self.samples as f64
    }

    /// Class with the highest F1; lowest index wins ties.
    pub fn best_f1_class(&self) -> usize {
        let mut best = 0;
        for (c, &v) in self.f1.iter().enumerate() {
            if v > self.f1[best] {
                best = c;
            }
        }
        best
    }
}
