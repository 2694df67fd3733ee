//! Reference implementations used only by tests.
//!
//! Nothing here calls into the library's kernels: the convolution reference
//! is a plain nested loop over output positions and the gradients are
//! central differences of a scalar function.

#![allow(dead_code)]

/// Geometry of one naive convolution: `n×c×h×w` input, `f×c×k×k` filters.
#[derive(Clone, Copy, Debug)]
pub struct Geom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn input_at(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
        let ix = (ox * self.stride + kj) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

pub fn conv_forward(g: &Geom, x: &[f64], wts: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.n * g.f * oh * ow];
    for n in 0..g.n {
        for f in 0..g.f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[f];
                    for c in 0..g.c {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                if let Some((iy, ix)) = g.input_at(oy, ox, ki, kj) {
                                    acc += wts[((f * g.c + c) * g.k + ki) * g.k + kj]
                                        * x[((n * g.c + c) * g.h + iy) * g.w + ix];
                                }
                            }
                        }
                    }
                    out[((n * g.f + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `dy`.
pub fn conv_backward(g: &Geom, x: &[f64], wts: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wts.len()];
    let mut db = vec![0.0; g.f];
    for n in 0..g.n {
        for f in 0..g.f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = dy[((n * g.f + f) * oh + oy) * ow + ox];
                    db[f] += d;
                    for c in 0..g.c {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                if let Some((iy, ix)) = g.input_at(oy, ox, ki, kj) {
                                    let xi = ((n * g.c + c) * g.h + iy) * g.w + ix;
                                    let wi = ((f * g.c + c) * g.k + ki) * g.k + kj;
                                    dw[wi] += d * x[xi];
                                    dx[xi] += d * wts[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + FD_STEP;
    let up = f(&probe);
    probe[i] = x[i] - FD_STEP;
    let down = f(&probe);
    (up - down) / (2.0 * FD_STEP)
}

/// Largest relative error between `analytic` and central differences of `f`
/// over the listed coordinates.
pub fn max_rel_err(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
) -> f64 {
    coords
        .into_iter()
        .map(|i| rel_err(analytic[i], central_diff(f, x, i)))
        .fold(0.0, f64::max)
}

/// Softmax cross-entropy averaged over rows, computed from scratch.
pub fn xent(logits: &[f64], targets: &[f64], classes: usize) -> f64 {
    let rows = logits.len() / classes;
    let mut total = 0.0;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (j, &t) in targets[r * classes..(r + 1) * classes].iter().enumerate() {
            total -= t * (z[j] - lse);
        }
    }
    total / rows as f64
}

/// Small deterministic generator for test inputs, independent of the
/// library's random source (SplitMix64).
pub struct Gen(u64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.range(lo, hi)).collect()
    }

    /// Values in `[-1, 1]` kept at least `gap` away from zero.
    pub fn away_from_zero(&mut self, len: usize, gap: f64) -> Vec<f64> {
        (0..len)
            .map(|_| {
                let v = self.range(gap, 1.0);
                if self.unit() < 0.5 { -v } else { v }
            })
            .collect()
    }

    pub fn one_hot(&mut self, rows: usize, classes: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * classes];
        for r in 0..rows {
            t[r * classes + self.below(classes)] = 1.0;
        }
        t
    }

    pub fn sample_coords(&mut self, len: usize, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.below(len)).collect()
    }
}
