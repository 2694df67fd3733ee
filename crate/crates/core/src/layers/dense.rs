use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

/// `y = x·W + b`, bias broadcast over the batch.
///
/// `x` is `batch×in`, `w` is `in×out`, `b` is `out`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inputs, outputs) = check(x, w, b)?;
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(b.data());
    }
    gemm(batch, inputs, outputs, x.data(), false, w.data(), false, &mut y, 1.0);
    Tensor::from_vec(Shape::new([batch, outputs])?, y)?.check_finite("dense forward")
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn dense_backward(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let mut dw = Tensor::zeros(w.shape().clone());
    let mut db = Tensor::zeros(Shape::new([w.dims()[1]])?);
    let dx = dense_backward_into(x, w, upstream, &mut dw, &mut db, true)?.expect("requested");
    Ok(DenseGrads { dx, dw, db })
}

/// Accumulates `xᵀ·dy` into `dw` and column sums of `dy` into `db`; returns
/// `dx = dy·Wᵀ`.
pub fn dense_backward_into(
    x: &Tensor,
    w: &Tensor,
    upstream: &Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
    want_dx: bool,
) -> Result<Option<Tensor>> {
    let (batch, inputs, outputs) = check(x, w, db)?;
    if upstream.dims() != [batch, outputs] {
        return Err(Error::ShapeMismatch(format!(
            "dense backward: upstream {} expected {}x{}",
            upstream.shape(),
            batch,
            outputs
        )));
    }
    if dw.shape() != w.shape() {
        return Err(Error::ShapeMismatch("dense backward: dw shape".into()));
    }
    gemm(inputs, batch, outputs, x.data(), true, upstream.data(), false, dw.data_mut(), 1.0);
    let dbd = db.data_mut();
    for row in upstream.data().chunks_exact(outputs) {
        for (acc, &g) in dbd.iter_mut().zip(row) {
            *acc += g;
        }
    }
    if !want_dx {
        return Ok(None);
    }
    let mut dx = vec![0.0; batch * inputs];
    gemm(batch, outputs, inputs, upstream.data(), false, w.data(), true, &mut dx, 0.0);
    Tensor::from_vec(Shape::new([batch, inputs])?, dx).map(Some)
}

fn check(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    match (x.dims(), w.dims(), b.dims()) {
        (&[batch, i], &[wi, o], &[bo]) if i == wi && o == bo => Ok((batch, i, o)),
        _ => Err(Error::ShapeMismatch(format!(
            "dense: x {} W {} b {}",
            x.shape(),
            w.shape(),
            b.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn rand(rng: &mut RandomSource, d: &[usize]) -> Tensor {
        Tensor::rand_uniform(rng, Shape::new(d).unwrap(), -1.0, 1.0).unwrap()
    }

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros_of(&[n, n]).unwrap();
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn identity_weights() {
        let mut rng = RandomSource::new(5);
        let x = rand(&mut rng, &[3, 4]);
        let y = dense_forward(&x, &eye(4), &Tensor::zeros_of(&[4]).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias_rows() {
        let mut rng = RandomSource::new(6);
        let w = rand(&mut rng, &[3, 2]);
        let b = Tensor::from_dims(&[2], vec![0.25, -1.5]).unwrap();
        let y = dense_forward(&Tensor::zeros_of(&[4, 3]).unwrap(), &w, &b).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = RandomSource::new(8);
        let x = rand(&mut rng, &[2, 3]);
        let w = rand(&mut rng, &[3, 4]);
        let b = rand(&mut rng, &[4]);
        let y = dense_forward(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut s = b.at(&[j]);
                for p in 0..3 {
                    s += x.at(&[i, p]) * w.at(&[p, j]);
                }
                assert!((y.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dw_for_identity_input_is_upstream() {
        let mut rng = RandomSource::new(9);
        let w = rand(&mut rng, &[3, 2]);
        let up = rand(&mut rng, &[3, 2]);
        let g = dense_backward(&eye(3), &w, &up).unwrap();
        assert_eq!(g.dw, up);
        for j in 0..2 {
            let s: f64 = (0..3).map(|i| up.at(&[i, j])).sum();
            assert!((g.db.at(&[j]) - s).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros_of(&[2, 3]).unwrap();
        let w = Tensor::zeros_of(&[4, 2]).unwrap();
        let b = Tensor::zeros_of(&[2]).unwrap();
        assert!(dense_forward(&x, &w, &b).is_err());
        let w = Tensor::zeros_of(&[3, 2]).unwrap();
        let bad = Tensor::zeros_of(&[3]).unwrap();
        assert!(dense_forward(&x, &w, &bad).is_err());
        assert!(dense_backward(&x, &w, &Tensor::zeros_of(&[2, 3]).unwrap()).is_err());
    }
}
