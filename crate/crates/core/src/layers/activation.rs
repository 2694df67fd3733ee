use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape().clone(), data).expect("same shape")
}

/// Upstream gradient masked by `x > 0`.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu backward: input {} vs upstream {}",
            x.shape(),
            upstream.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape().clone(), data)
}
