use crate::error::{Error, Result};
use crate::network::Mode;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Per-element multipliers applied in the forward pass: `0` for dropped
/// elements, `1/(1−rate)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted dropout. Eval mode and `rate == 0` are identity and draw nothing
/// from `rng`; the mask is `None` in that case.
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    rng: &mut RandomSource,
    mode: Mode,
) -> Result<(Tensor, Option<DropoutMask>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape().clone(), data)?, Some(DropoutMask(mask))))
}

pub fn dropout_backward(upstream: &Tensor, mask: Option<&DropoutMask>) -> Result<Tensor> {
    match mask {
        None => Ok(upstream.clone()),
        Some(DropoutMask(m)) => {
            if m.len() != upstream.numel() {
                return Err(Error::ShapeMismatch("dropout backward: mask length".into()));
            }
            let data = upstream.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
            Tensor::from_vec(upstream.shape().clone(), data)
        }
    }
}
