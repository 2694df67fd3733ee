//! The network layouts used by the experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::NUM_CLASSES;
use crate::network::{LayerSpec, Network};

pub const MNIST_INPUT: [usize; 3] = [1, 28, 28];
pub const CIFAR_INPUT: [usize; 3] = [3, 32, 32];

/// Where the CIFAR dropout layer sits relative to the second pooling stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    #[default]
    BeforePool,
    AfterPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `flatten → dense 784→10`: multinomial logistic regression.
    Logistic,
    /// `flatten → dense 784→h → relu → dense h→10`.
    Mlp { hidden: usize },
    /// `conv 16@5×5 (pad 2) → relu → pool 2×2 → flatten → dense 3136→h →
    /// relu → dense h→10`.
    MnistCnn { hidden: usize },
    /// `conv 16@5×5 → relu → pool → conv 20@5×5 → relu → [dropout] → pool →
    /// flatten → dense 1280→10`, both convs padded by 2.
    CifarCnn {
        dropout: Option<f64>,
        #[serde(default)]
        placement: DropoutPlacement,
    },
}

impl Architecture {
    pub fn input_dims(&self) -> [usize; 3] {
        match self {
            Architecture::CifarCnn { .. } => CIFAR_INPUT,
            _ => MNIST_INPUT,
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let mnist_flat: usize = MNIST_INPUT.iter().product();
        match *self {
            Architecture::Logistic => vec![
                Flatten,
                Dense {
                    inputs: mnist_flat,
                    outputs: NUM_CLASSES,
                },
                SoftmaxXent,
            ],
            Architecture::Mlp { hidden } => vec![
                Flatten,
                Dense {
                    inputs: mnist_flat,
                    outputs: hidden,
                },
                Relu,
                Dense {
                    inputs: hidden,
                    outputs: NUM_CLASSES,
                },
                SoftmaxXent,
            ],
            Architecture::MnistCnn { hidden } => vec![
                conv(16, 1),
                Relu,
                pool(),
                Flatten,
                Dense {
                    inputs: 16 * 14 * 14,
                    outputs: hidden,
                },
                Relu,
                Dense {
                    inputs: hidden,
                    outputs: NUM_CLASSES,
                },
                SoftmaxXent,
            ],
            Architecture::CifarCnn { dropout, placement } => {
                let mut v = vec![conv(16, 3), Relu, pool(), conv(20, 16), Relu];
                match (dropout, placement) {
                    (Some(rate), DropoutPlacement::BeforePool) => v.extend([Dropout { rate }, pool()]),
                    (Some(rate), DropoutPlacement::AfterPool) => v.extend([pool(), Dropout { rate }]),
                    (None, _) => v.push(pool()),
                }
                v.extend([
                    Flatten,
                    Dense {
                        inputs: 20 * 8 * 8,
                        outputs: NUM_CLASSES,
                    },
                    SoftmaxXent,
                ]);
                v
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        let net = Network::build(&self.input_dims(), self.layers(), seed)?;
        if net.num_classes() != NUM_CLASSES {
            return Err(Error::InvalidSpec(format!("output width {} != 10", net.num_classes())));
        }
        Ok(net)
    }
}

fn conv(filters: usize, channels: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        channels,
        kernel: 5,
        stride: 1,
        pad: 2,
    }
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool { window: 2, stride: 2 }
}
