//! A small neural-network library with explicit backpropagation.
//!
//! * [`tensor`]: dense row-major `f64` tensors and GEMM.
//! * [`rng`]: the seeded ChaCha8 random source every draw goes through.
//! * [`layers`]: dense, ReLU, conv2d, max-pool, dropout and softmax
//!   cross-entropy kernels (forward and backward).
//! * [`network`]: layer stacks, forward caches, gradient accumulation.
//! * [`optim`]: SGD, momentum SGD and Adadelta.
//! * [`data`]: MNIST IDX and CIFAR-10 binary loaders, batching.
//! * [`metrics`]: error rate, confusion matrix, precision/recall/F1.
//! * [`checkpoint`]: bit-exact network save/load.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use arch::{Architecture, DropoutPlacement};
pub use error::{Error, Result};
pub use network::{ForwardCache, LayerSpec, Mode, Network, Parameter};
pub use optim::{HyperParams, Optimizer, OptimizerKind, OptimizerState};
pub use rng::RandomSource;
pub use tensor::{Shape, Tensor};
