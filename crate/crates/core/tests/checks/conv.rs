//! im2col convolution against the direct nested-loop definition.

use handnet::layers::{conv2d_backward, conv2d_forward};
use handnet::Tensor;
use crate::oracle::{conv_backward, conv_forward, Gen, Geom};

pub const TOL: f64 = 1e-12;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest forward/backward discrepancy for one geometry.
pub fn compare(g: &Geom, gen: &mut Gen) -> f64 {
    let x = gen.vec(g.n * g.c * g.h * g.w, -1.0, 1.0);
    let w = gen.vec(g.f * g.c * g.k * g.k, -1.0, 1.0);
    let b = gen.vec(g.f, -1.0, 1.0);
    let dy = gen.vec(g.n * g.f * g.out_h() * g.out_w(), -1.0, 1.0);
    let xt = Tensor::from_dims(&[g.n, g.c, g.h, g.w], x.clone()).unwrap();
    let wt = Tensor::from_dims(&[g.f, g.c, g.k, g.k], w.clone()).unwrap();
    let bt = Tensor::from_dims(&[g.f], b.clone()).unwrap();
    let dyt = Tensor::from_dims(&[g.n, g.f, g.out_h(), g.out_w()], dy.clone()).unwrap();

    let y = conv2d_forward(&xt, &wt, &bt, g.stride, g.pad).unwrap();
    assert_eq!(y.dims(), &[g.n, g.f, g.out_h(), g.out_w()]);
    let grads = conv2d_backward(&xt, &wt, &dyt, g.stride, g.pad).unwrap();
    let (dx, dw, db) = conv_backward(g, &x, &w, &dy);
    [
        max_abs_diff(y.data(), &conv_forward(g, &x, &w, &b)),
        max_abs_diff(grads.dx.data(), &dx),
        max_abs_diff(grads.dfilters.data(), &dw),
        max_abs_diff(grads.dbias.data(), &db),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn random_geometry(gen: &mut Gen) -> Geom {
    let k = 1 + gen.below(5);
    let stride = 1 + gen.below(3);
    let pad = gen.below(3);
    let pick = |gen: &mut Gen| {
        // smallest extent >= k that tiles exactly, plus a few whole strides
        let base = (k + stride - 1).saturating_sub(2 * pad).max(1);
        let mut e = base;
        while e + 2 * pad < k || !(e + 2 * pad - k).is_multiple_of(stride) {
            e += 1;
        }
        e + stride * gen.below(5)
    };
    Geom {
        n: 1 + gen.below(3),
        c: 1 + gen.below(4),
        h: pick(gen),
        w: pick(gen),
        f: 1 + gen.below(4),
        k,
        stride,
        pad,
    }
}

/// The three layer geometries of the MNIST and CIFAR networks followed by
/// random ones, 50 in all.
pub fn geometries(gen: &mut Gen) -> Vec<Geom> {
    let mut geoms = vec![
        Geom { n: 2, c: 3, h: 32, w: 32, f: 16, k: 5, stride: 1, pad: 2 },
        Geom { n: 2, c: 16, h: 16, w: 16, f: 20, k: 5, stride: 1, pad: 2 },
        Geom { n: 1, c: 1, h: 28, w: 28, f: 16, k: 5, stride: 1, pad: 2 },
    ];
    while geoms.len() < 50 {
        geoms.push(random_geometry(gen));
    }
    geoms
}
