//! 2-D cross-correlation via im2col + GEMM.
//!
//! Layout: input `N×C×H×W`, filters `F×C×k×k`, output `N×F×H'×W'` with
//! `H' = (H + 2·pad − k)/stride + 1`. For each sample the input patch matrix
//! `cols` is `(C·k·k) × (H'·W')`, so the forward pass is one GEMM per sample:
//! `out = filters(F × C·k·k) · cols + bias`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], filters: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, channels, height, width) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::InvalidGeometry(format!("conv input must be NxCxHxW, got {input:?}"))),
        };
        let (nf, fc, kh, kw) = match *filters {
            [f, c, kh, kw] => (f, c, kh, kw),
            _ => return Err(Error::InvalidGeometry(format!("filters must be FxCxkxk, got {filters:?}"))),
        };
        if fc != channels {
            return Err(Error::ShapeMismatch(format!(
                "conv: filters expect {fc} channels, input has {channels}"
            )));
        }
        if kh != kw || kh == 0 {
            return Err(Error::InvalidGeometry(format!("kernel must be square and >= 1, got {kh}x{kw}")));
        }
        let out_h = out_extent(height, kh, stride, pad)?;
        let out_w = out_extent(width, kh, stride, pad)?;
        Ok(ConvGeometry {
            batch,
            channels,
            height,
            width,
            filters: nf,
            kernel: kh,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_dims(&self) -> [usize; 4] {
        [self.batch, self.filters, self.out_h, self.out_w]
    }
}

/// Output extent, or an error when the window does not tile exactly.
pub(crate) fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidGeometry("stride must be >= 1".into()));
    }
    let padded = size + 2 * pad;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::InvalidGeometry(format!(
            "extent {size} with pad {pad}, kernel {kernel}, stride {stride} is not integral"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            line[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(x.dims(), filters.dims(), stride, pad)?;
    if bias.dims() != [g.filters] {
        return Err(Error::ShapeMismatch(format!(
            "conv bias {} for {} filters",
            bias.shape(),
            g.filters
        )));
    }
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let out_len = g.filters * p;
    let mut out = vec![0.0; g.batch * out_len];
    let mut cols = vec![0.0; kl * p];
    for (n, xs) in x.data().chunks_exact(g.in_len()).enumerate() {
        im2col(&g, xs, &mut cols);
        let o = &mut out[n * out_len..(n + 1) * out_len];
        for (f, &b) in bias.data().iter().enumerate() {
            o[f * p..(f + 1) * p].fill(b);
        }
        gemm(g.filters, kl, p, filters.data(), false, &cols, false, o, 1.0);
    }
    Tensor::from_vec(Shape::new(g.out_dims())?, out)?.check_finite("conv2d forward")
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dfilters: Tensor,
    pub dbias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let mut dfilters = Tensor::zeros(filters.shape().clone());
    let mut dbias = Tensor::zeros(Shape::new([filters.dims()[0]])?);
    let dx = conv2d_backward_into(x, filters, upstream, stride, pad, &mut dfilters, &mut dbias, true)?.expect("requested");
    Ok(ConvGrads { dx, dfilters, dbias })
}

/// Accumulates filter and bias gradients in place and returns `dx`.
pub(crate) fn conv2d_backward_into(
    x: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
    stride: usize,
    pad: usize,
    dfilters: &mut Tensor,
    dbias: &mut Tensor,
    want_dx: bool,
) -> Result<Option<Tensor>> {
    let g = ConvGeometry::new(x.dims(), filters.dims(), stride, pad)?;
    if upstream.dims() != g.out_dims() {
        return Err(Error::ShapeMismatch(format!(
            "conv backward: upstream {} expected {:?}",
            upstream.shape(),
            g.out_dims()
        )));
    }
    if dfilters.shape() != filters.shape() || dbias.dims() != [g.filters] {
        return Err(Error::ShapeMismatch("conv backward: gradient buffers".into()));
    }
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let out_len = g.filters * p;
    let mut dx = vec![0.0; if want_dx { x.numel() } else { 0 }];
    let mut cols = vec![0.0; kl * p];
    let mut dcols = vec![0.0; kl * p];
    for (n, xs) in x.data().chunks_exact(g.in_len()).enumerate() {
        let dy = &upstream.data()[n * out_len..(n + 1) * out_len];
        im2col(&g, xs, &mut cols);
        gemm(g.filters, p, kl, dy, false, &cols, true, dfilters.data_mut(), 1.0);
        for (f, acc) in dbias.data_mut().iter_mut().enumerate() {
            *acc += dy[f * p..(f + 1) * p].iter().sum::<f64>();
        }
        if want_dx {
            gemm(kl, g.filters, p, filters.data(), true, dy, false, &mut dcols, 0.0);
            col2im(&g, &dcols, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    if !want_dx {
        return Ok(None);
    }
    Tensor::from_vec(x.shape().clone(), dx).map(Some)
}
