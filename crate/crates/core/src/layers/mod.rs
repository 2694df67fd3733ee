//! Forward/backward kernels for each layer kind.
//!
//! Kernels are free functions over [`Tensor`](crate::Tensor)s. The
//! [`Network`](crate::Network) strings them together and owns the caches;
//! the kernels themselves are stateless so they can be checked one at a time.

mod activation;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads};
pub use dense::{dense_backward, dense_backward_into, dense_forward, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use loss::{softmax, softmax_xent};
pub use pool::{maxpool_backward, maxpool_forward, PoolGeometry};

pub(crate) use conv::conv2d_backward_into;
pub(crate) use dropout::check_rate;
pub(crate) use conv::out_extent;
