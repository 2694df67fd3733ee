//! Experiment configuration, echoed into every run record.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use handnet::{Architecture, HyperParams, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Serve,
}

impl ExperimentId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
            ExperimentId::Exp5 => "exp5",
            ExperimentId::Serve => "serve",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Cifar10,
}

impl FromStr for Dataset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "cifar10" | "cifar-10" | "cifar" => Ok(Dataset::Cifar10),
            other => Err(HarnessError::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// How much of the training split a run uses. Subsets are always the
/// leading samples in file order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Subset {
    Full,
    Count(usize),
    Fraction(f64),
}

impl Subset {
    pub fn resolve(&self, available: usize) -> usize {
        match *self {
            Subset::Full => available,
            Subset::Count(n) => n.min(available),
            Subset::Fraction(f) => ((available as f64 * f).round() as usize).clamp(1, available),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subset::Full => f.write_str("full"),
            Subset::Count(n) => write!(f, "{n}"),
            Subset::Fraction(x) => write!(f, "{x:?}"),
        }
    }
}

impl FromStr for Subset {
    type Err = HarnessError;

    /// `full`, a sample count (`10000`), or a fraction in `(0, 1]` (`0.25`).
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Subset::Full);
        }
        if let Ok(n) = s.parse::<usize>() {
            return if n == 0 {
                Err(HarnessError::Config("subset count must be >= 1".into()))
            } else {
                Ok(Subset::Count(n))
            };
        }
        match s.parse::<f64>() {
            Ok(f) if f > 0.0 && f <= 1.0 => Ok(Subset::Fraction(f)),
            _ => Err(HarnessError::Config(format!(
                "subset `{s}` is not `full`, a count, or a fraction in (0, 1]"
            ))),
        }
    }
}

impl Serialize for Subset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(HarnessError::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// One training run. Sweeps clone a base config and vary one field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub dataset: Dataset,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub hyper: HyperParams,
    /// Full passes over the (subset) training data. Ignored when
    /// `sample_budget` is set.
    pub epochs: usize,
    /// Stop after exactly this many training samples.
    pub sample_budget: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub subset: Subset,
    /// Samples between series points in budget runs.
    pub eval_every: usize,
    /// Leading test images used for periodic evaluation; `None` uses all.
    pub eval_slice: Option<usize>,
    /// Evaluate on the training subset after every epoch (eval mode).
    pub track_train_error: bool,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn mnist(experiment: ExperimentId, architecture: Architecture) -> Self {
        ExperimentConfig {
            experiment,
            dataset: Dataset::Mnist,
            architecture,
            optimizer: OptimizerKind::Sgd,
            hyper: sgd_hyper(0.1),
            epochs: 10,
            sample_budget: None,
            batch_size: 32,
            seed: 7,
            subset: Subset::Count(10_000),
            eval_every: 0,
            eval_slice: None,
            track_train_error: false,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn cifar(experiment: ExperimentId, dropout: Option<f64>) -> Self {
        ExperimentConfig {
            experiment,
            dataset: Dataset::Cifar10,
            architecture: Architecture::CifarCnn {
                dropout,
                placement: Default::default(),
            },
            optimizer: OptimizerKind::Momentum,
            hyper: HyperParams {
                learning_rate: 0.01,
                momentum: 0.9,
                ..Default::default()
            },
            epochs: 0,
            sample_budget: Some(150_000),
            batch_size: 32,
            seed: 7,
            subset: Subset::Full,
            eval_every: 5_000,
            eval_slice: Some(1_000),
            track_train_error: false,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if self.sample_budget.is_some() && self.eval_every == 0 {
            return Err(HarnessError::Config("budget runs need eval_every >= 1".into()));
        }
        let want = match self.dataset {
            Dataset::Mnist => handnet::arch::MNIST_INPUT,
            Dataset::Cifar10 => handnet::arch::CIFAR_INPUT,
        };
        if self.architecture.input_dims() != want {
            return Err(HarnessError::Config(format!(
                "architecture expects {:?} input, dataset provides {:?}",
                self.architecture.input_dims(),
                want
            )));
        }
        Ok(())
    }
}

/// Plain SGD hyperparameters with momentum recorded as 0.
pub fn sgd_hyper(learning_rate: f64) -> HyperParams {
    HyperParams {
        learning_rate,
        momentum: 0.0,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_parsing() {
        assert_eq!("full".parse::<Subset>().unwrap(), Subset::Full);
        assert_eq!("10000".parse::<Subset>().unwrap(), Subset::Count(10_000));
        assert_eq!("0.5".parse::<Subset>().unwrap(), Subset::Fraction(0.5));
        assert!("0".parse::<Subset>().is_err());
        assert!("1.5".parse::<Subset>().is_err());
        assert_eq!(Subset::Fraction(0.25).resolve(60_000), 15_000);
        assert_eq!(Subset::Count(10).resolve(5), 5);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::cifar(ExperimentId::Exp5, Some(0.5));
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), cfg);
    }

    #[test]
    fn dataset_architecture_mismatch() {
        let mut cfg = ExperimentConfig::cifar(ExperimentId::Exp4, None);
        cfg.dataset = Dataset::Mnist;
        assert!(cfg.validate().is_err());
    }
}
