use crate::error::{Error, Result};
use crate::layers::conv::out_extent;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    /// Windows must tile the input exactly; no implicit truncation.
    pub fn new(input: &[usize], window: usize, stride: usize) -> Result<Self> {
        let (batch, channels, height, width) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::InvalidGeometry(format!("pool input must be NxCxHxW, got {input:?}"))),
        };
        if window == 0 {
            return Err(Error::InvalidGeometry("pool window must be >= 1".into()));
        }
        let out_h = out_extent(height, window, stride, 0)?;
        let out_w = out_extent(width, window, stride, 0)?;
        Ok(PoolGeometry {
            batch,
            channels,
            height,
            width,
            window,
            stride,
            out_h,
            out_w,
        })
    }

    pub fn out_dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_h, self.out_w]
    }
}

/// Per-window maximum. Also returns, for every output element, the flat
/// input index it was taken from (first maximum in row-major window order).
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let g = PoolGeometry::new(x.dims(), window, stride)?;
    let src = x.data();
    let n_out = g.batch * g.channels * g.out_h * g.out_w;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);
    for plane in 0..g.batch * g.channels {
        let base = plane * g.height * g.width;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = base + oy * g.stride * g.width + ox * g.stride;
                for wy in 0..window {
                    let row = base + (oy * g.stride + wy) * g.width + ox * g.stride;
                    for idx in row..row + window {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(Shape::new(g.out_dims())?, out)?, argmax))
}

/// Routes each upstream element to the input position that won its window.
pub fn maxpool_backward(upstream: &Tensor, argmax: &[usize], input_shape: &Shape) -> Result<Tensor> {
    if upstream.numel() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "maxpool backward: {} upstream values for {} windows",
            upstream.numel(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape.clone());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        if idx >= d.len() {
            return Err(Error::ShapeMismatch("maxpool backward: index out of range".into()));
        }
        d[idx] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn constant_input_quarter_size() {
        let x = Tensor::filled(Shape::new([1, 2, 4, 6]).unwrap(), 3.0);
        let (y, _) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn two_by_two() {
        let x = Tensor::from_dims(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, am) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(am, vec![3]);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = RandomSource::new(4);
        let x = Tensor::rand_uniform(&mut rng, Shape::new([1, 1, 6, 6]).unwrap(), -1.0, 1.0).unwrap();
        let (y, _) = maxpool_forward(&x, 2, 2).unwrap();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(&[0, 0, 2 * oy + dy, 2 * ox + dx]));
                    }
                }
                assert_eq!(y.at(&[0, 0, oy, ox]), m);
            }
        }
    }

    #[test]
    fn backward_routes_each_gradient_once() {
        let mut rng = RandomSource::new(5);
        let x = Tensor::rand_uniform(&mut rng, Shape::new([2, 3, 4, 4]).unwrap(), -1.0, 1.0).unwrap();
        let (y, am) = maxpool_forward(&x, 2, 2).unwrap();
        let up = Tensor::rand_uniform(&mut rng, y.shape().clone(), -1.0, 1.0).unwrap();
        let dx = maxpool_backward(&up, &am, x.shape()).unwrap();
        let s_dx: f64 = dx.data().iter().map(|v| v.abs()).sum();
        let s_up: f64 = up.data().iter().map(|v| v.abs()).sum();
        assert!((s_dx - s_up).abs() < 1e-12);
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), up.numel());
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::zeros_of(&[1, 1, 5, 4]).unwrap();
        assert!(matches!(maxpool_forward(&x, 2, 2), Err(Error::InvalidGeometry(_))));
        let v = Tensor::zeros_of(&[4, 4]).unwrap();
        assert!(maxpool_forward(&v, 2, 2).is_err());
    }
}
