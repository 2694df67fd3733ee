//! Dense row-major `f64` tensors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Number of elements.
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Shape::new(v)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Vec<usize> {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Scale,
}

#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl Tensor {
    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Convenience for `filled(Shape::new(dims)?, 0.0)`.
    pub fn zeros_of(dims: &[usize]) -> Result<Self> {
        Ok(Self::zeros(Shape::new(dims)?))
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::from_vec(Shape::new(dims)?, data)
    }

    pub fn rand_uniform(rng: &mut RandomSource, shape: Shape, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidRange { lo, hi });
        }
        let n = shape.numel();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(rng.uniform_in(lo, hi)?);
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.rank());
        index
            .iter()
            .zip(self.dims())
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn reshape(&self, new: Shape) -> Result<Tensor> {
        self.clone().into_shape(new)
    }

    pub fn into_shape(self, new: Shape) -> Result<Tensor> {
        if new.numel() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} into {}",
                self.shape, new
            )));
        }
        Ok(Tensor {
            shape: new,
            data: self.data,
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_t(self, false, other, false)
    }

    pub fn ew(&self, op: EwOp, rhs: Operand<'_>) -> Result<Tensor> {
        let data: Vec<f64> = match (op, rhs) {
            (EwOp::Scale, Operand::Tensor(_)) => {
                return Err(Error::ShapeMismatch("scale takes a scalar operand".into()))
            }
            (_, Operand::Tensor(t)) => {
                if t.shape != self.shape {
                    return Err(Error::ShapeMismatch(format!(
                        "elementwise {:?}: {} vs {}",
                        op, self.shape, t.shape
                    )));
                }
                let f = binary(op);
                self.data.iter().zip(&t.data).map(|(&a, &b)| f(a, b)).collect()
            }
            (_, Operand::Scalar(s)) => {
                let f = binary(op);
                self.data.iter().map(|&a| f(a, s)).collect()
            }
        };
        let out = Tensor {
            shape: self.shape.clone(),
            data,
        };
        out.check_finite("elementwise op")
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.ew(EwOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.ew(EwOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.ew(EwOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        self.ew(EwOp::Scale, Operand::Scalar(s))
    }

    pub(crate) fn check_finite(self, what: &'static str) -> Result<Tensor> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

fn binary(op: EwOp) -> fn(f64, f64) -> f64 {
    match op {
        EwOp::Add => |a, b| a + b,
        EwOp::Sub => |a, b| a - b,
        EwOp::Mul | EwOp::Scale => |a, b| a * b,
    }
}

/// `op(a) · op(b)` for 2-D tensors, where `op` optionally transposes.
pub fn matmul_t(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let (ar, ac) = dims2(a, "matmul lhs")?;
    let (br, bc) = dims2(b, "matmul rhs")?;
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dims {} vs {} ({} x {})",
            k, k2, a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, trans_a, &b.data, trans_b, &mut out, 0.0);
    Tensor::from_vec(Shape::new([m, n])?, out)?.check_finite("matmul")
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.dims() {
        &[r, c] => Ok((r, c)),
        d => Err(Error::ShapeMismatch(format!("{what} must be 2-D, got {d:?}"))),
    }
}

/// `c = op(a)·op(b) + beta·c` on raw row-major buffers.
///
/// `a` is stored as `m×k` (or `k×m` when `trans_a`), `b` as `k×n` (or
/// `n×k` when `trans_b`), `c` as `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above guarantee every (row, col) reached
    // through these strides lies inside the corresponding slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
