//! Finite-difference gradient checks shared by the test targets.
//!
//! Each layer kernel is checked through the scalar `L = Σ y ⊙ R` for a fixed
//! random `R`, whose gradient with respect to `y` is `R` itself. Whole
//! networks are checked through the mean cross-entropy.

use handnet::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, softmax_xent,
};
use handnet::rng::stream;
use handnet::{Architecture, LayerSpec, Mode, Network, RandomSource, Shape, Tensor};
use crate::oracle::{max_rel_err, rel_err, xent, Gen, FD_STEP, REL_TOL};


fn t(dims: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_dims(dims, data).unwrap()
}

fn dot(a: &Tensor, r: &[f64]) -> f64 {
    a.data().iter().zip(r).map(|(x, y)| x * y).sum()
}

fn all(len: usize) -> std::ops::Range<usize> {
    0..len
}

pub fn dense(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(case);
        let (b, i, o) = (1 + g.below(4), 1 + g.below(7), 1 + g.below(6));
        let x = g.vec(b * i, -1.0, 1.0);
        let w = g.vec(i * o, -1.0, 1.0);
        let bias = g.vec(o, -1.0, 1.0);
        let r = g.vec(b * o, -1.0, 1.0);
        let up = t(&[b, o], r.clone());
        let grads = dense_backward(&t(&[b, i], x.clone()), &t(&[i, o], w.clone()), &up).unwrap();

        let loss = |x: &[f64], w: &[f64], bias: &[f64]| {
            dot(&dense_forward(&t(&[b, i], x.to_vec()), &t(&[i, o], w.to_vec()), &t(&[o], bias.to_vec())).unwrap(), &r)
        };
        let ex = max_rel_err(&mut |p| loss(p, &w, &bias), &x, grads.dx.data(), all(x.len()));
        let ew = max_rel_err(&mut |p| loss(&x, p, &bias), &w, grads.dw.data(), all(w.len()));
        let eb = max_rel_err(&mut |p| loss(&x, &w, p), &bias, grads.db.data(), all(bias.len()));
        worst = worst.max(ex).max(ew).max(eb);
    }
    worst
}

pub fn relu(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(100 + case);
        let n = 1 + g.below(40);
        // keep inputs clear of the kink so the difference quotient is one-sided-free
        let x = g.away_from_zero(n, 1e-3);
        let r = g.vec(n, -1.0, 1.0);
        let dx = relu_backward(&t(&[n], x.clone()), &t(&[n], r.clone())).unwrap();
        let err = max_rel_err(&mut |p| dot(&relu_forward(&t(&[n], p.to_vec())), &r), &x, dx.data(), all(n));
        worst = worst.max(err);
    }
    worst
}

pub fn conv2d(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(200 + case);
        let k = 1 + g.below(3);
        let stride = 1 + g.below(2);
        let pad = g.below(k);
        let (n, c, f) = (1 + g.below(2), 1 + g.below(3), 1 + g.below(3));
        let mut h = k + g.below(5);
        let mut w = k + g.below(5);
        h += (h + 2 * pad - k) % stride;
        w += (w + 2 * pad - k) % stride;
        let x = g.vec(n * c * h * w, -1.0, 1.0);
        let wts = g.vec(f * c * k * k, -1.0, 1.0);
        let bias = g.vec(f, -1.0, 1.0);
        let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        let r = g.vec(n * f * oh * ow, -1.0, 1.0);

        let xs = [n, c, h, w];
        let ws = [f, c, k, k];
        let grads = conv2d_backward(&t(&xs, x.clone()), &t(&ws, wts.clone()), &t(&[n, f, oh, ow], r.clone()), stride, pad).unwrap();
        let loss = |x: &[f64], wts: &[f64], bias: &[f64]| {
            let y = conv2d_forward(&t(&xs, x.to_vec()), &t(&ws, wts.to_vec()), &t(&[f], bias.to_vec()), stride, pad).unwrap();
            dot(&y, &r)
        };
        let ex = max_rel_err(&mut |p| loss(p, &wts, &bias), &x, grads.dx.data(), all(x.len()));
        let ew = max_rel_err(&mut |p| loss(&x, p, &bias), &wts, grads.dfilters.data(), all(wts.len()));
        let eb = max_rel_err(&mut |p| loss(&x, &wts, p), &bias, grads.dbias.data(), all(f));
        worst = worst.max(ex).max(ew).max(eb);
    }
    worst
}

pub fn maxpool(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(300 + case);
        let window = 1 + g.below(3);
        let stride = window;
        let (n, c) = (1 + g.below(2), 1 + g.below(3));
        let (oh, ow) = (1 + g.below(4), 1 + g.below(4));
        let (h, w) = (oh * window, ow * window);
        // distinct values spaced well beyond the step so no window has a near-tie
        let mut order: Vec<usize> = (0..n * c * h * w).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, g.below(i + 1));
        }
        let x: Vec<f64> = order.iter().map(|&v| v as f64 * 0.01 - 1.0).collect();
        let r = g.vec(n * c * oh * ow, -1.0, 1.0);
        let shape = Shape::new([n, c, h, w]).unwrap();
        let (_, argmax) = maxpool_forward(&t(&[n, c, h, w], x.clone()), window, stride).unwrap();
        let dx = maxpool_backward(&t(&[n, c, oh, ow], r.clone()), &argmax, &shape).unwrap();
        let err = max_rel_err(
            &mut |p| dot(&maxpool_forward(&t(&[n, c, h, w], p.to_vec()), window, stride).unwrap().0, &r),
            &x,
            dx.data(),
            all(x.len()),
        );
        worst = worst.max(err);
    }
    worst
}

/// Eval mode, and train mode with the mask replayed from a fixed seed.
pub fn dropout(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(400 + case);
        let n = 1 + g.below(50);
        let rate = g.range(0.0, 0.9);
        let x = g.vec(n, -1.0, 1.0);
        let r = g.vec(n, -1.0, 1.0);
        for mode in [Mode::Eval, Mode::Train] {
            let fresh = || RandomSource::with_stream(case, stream::DROPOUT);
            let (_, mask) = dropout_forward(&t(&[n], x.clone()), rate, &mut fresh(), mode).unwrap();
            let dx = dropout_backward(&t(&[n], r.clone()), mask.as_ref()).unwrap();
            let err = max_rel_err(
                &mut |p| dot(&dropout_forward(&t(&[n], p.to_vec()), rate, &mut fresh(), mode).unwrap().0, &r),
                &x,
                dx.data(),
                all(n),
            );
            worst = worst.max(err);
        }
    }
    worst
}

pub fn softmax_xent_loss(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut g = Gen::new(500 + case);
        let (b, k) = (1 + g.below(5), 2 + g.below(9));
        let z = g.vec(b * k, -4.0, 4.0);
        let target = g.one_hot(b, k);
        let (loss, dz) = softmax_xent(&t(&[b, k], z.clone()), &t(&[b, k], target.clone())).unwrap();
        assert!((loss - xent(&z, &target, k)).abs() < 1e-12);
        let err = max_rel_err(&mut |p| xent(p, &target, k), &z, dz.data(), all(z.len()));
        worst = worst.max(err);
    }
    worst
}

/// Which ReLUs are active and which pool inputs win, for one forward pass
/// rebuilt from the kernels, plus the logits. Central differences are only
/// meaningful when the routing is the same at both ends of the stencil.
fn routing(net: &Network, x: &Tensor, rng: &mut RandomSource) -> (Tensor, Routing) {
    let (mut active, mut winners) = (Vec::new(), Vec::new());
    let mut params = net.params().iter();
    let mut cur = x.clone();
    for spec in net.layers() {
        cur = match *spec {
            LayerSpec::Dense { .. } => {
                let (w, b) = (params.next().unwrap(), params.next().unwrap());
                dense_forward(&cur, &w.value, &b.value).unwrap()
            }
            LayerSpec::Conv2d { stride, pad, .. } => {
                let (w, b) = (params.next().unwrap(), params.next().unwrap());
                conv2d_forward(&cur, &w.value, &b.value, stride, pad).unwrap()
            }
            LayerSpec::Relu => {
                active.extend(cur.data().iter().map(|&v| v > 0.0));
                relu_forward(&cur)
            }
            LayerSpec::MaxPool { window, stride } => {
                let (y, argmax) = maxpool_forward(&cur, window, stride).unwrap();
                winners.extend(argmax);
                y
            }
            LayerSpec::Dropout { rate } => dropout_forward(&cur, rate, rng, net.mode()).unwrap().0,
            LayerSpec::Flatten => {
                let batch = cur.dims()[0];
                let flat = cur.numel() / batch;
                cur.reshape(Shape::new([batch, flat]).unwrap()).unwrap()
            }
            LayerSpec::SoftmaxXent => break,
        };
    }
    (cur, (active, winners))
}

type Routing = (Vec<bool>, Vec<usize>);

#[derive(Debug, Default)]
pub struct NetworkCheck {
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl NetworkCheck {
    pub fn passed(&self) -> bool {
        // a wholesale routing mismatch would show up as mass skipping
        self.worst < REL_TOL && self.skipped * 4 <= self.checked
    }

    fn merge(&mut self, other: NetworkCheck) {
        self.worst = self.worst.max(other.worst);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Checks sampled parameter coordinates of a whole network. Dropout draws are
/// replayed from a freshly seeded source on every evaluation so the mask is
/// fixed across the perturbations. Coordinates whose stencil changes the
/// routing are redrawn and counted.
pub fn check_network(mut net: Network, batch: usize, case: u64, coords_per_param: usize) -> NetworkCheck {
    let mut g = Gen::new(900 + case);
    let mut dims = vec![batch];
    dims.extend_from_slice(net.input_dims());
    let numel: usize = dims.iter().product();
    let x = t(&dims, g.vec(numel, -1.0, 1.0));
    let classes = net.num_classes();
    let target = g.one_hot(batch, classes);
    let fresh = || RandomSource::with_stream(case, stream::DROPOUT);

    net.zero_grads();
    let (_, logits) = net.loss_and_backward(&x, &t(&[batch, classes], target.clone()), &mut fresh()).unwrap();
    assert_eq!(routing(&net, &x, &mut fresh()).0, logits);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut out = NetworkCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let base = net.params()[pi].value.data().to_vec();
        let mut done = 0;
        while done < coords_per_param {
            let c = g.below(base.len());
            let mut at = |delta: f64| {
                net.params_mut()[pi].value.data_mut()[c] = base[c] + delta;
                let (logits, r) = routing(&net, &x, &mut fresh());
                (xent(logits.data(), &target, classes), r)
            };
            let (up, r_up) = at(FD_STEP);
            let (down, r_down) = at(-FD_STEP);
            net.params_mut()[pi].value.data_mut()[c] = base[c];
            if r_up != r_down {
                out.skipped += 1;
                assert!(out.skipped <= 10 * coords_per_param, "routing changes on almost every coordinate");
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            out.worst = out.worst.max(rel_err(grad[c], numeric));
            done += 1;
        }
        out.checked += done;
    }
    out
}

/// Runs `check_network` on `cases` networks built by `build(case)`.
pub fn networks(cases: u64, batch: usize, coords_per_param: usize, build: impl Fn(u64) -> Network) -> NetworkCheck {
    let mut total = NetworkCheck::default();
    for case in 0..cases {
        total.merge(check_network(build(case), batch, case, coords_per_param));
    }
    total
}

pub fn logistic(cases: u64) -> NetworkCheck {
    networks(cases, 3, 8, |case| Architecture::Logistic.build(case).unwrap())
}

pub fn mnist_cnn(cases: u64) -> NetworkCheck {
    networks(cases, 2, 5, |case| Architecture::MnistCnn { hidden: 784 }.build(case).unwrap())
}

/// The CIFAR network with dropout 0.5, checked in train mode.
pub fn cifar_cnn(cases: u64) -> NetworkCheck {
    networks(cases, 2, 5, |case| {
        let mut net = Architecture::CifarCnn {
            dropout: Some(0.5),
            placement: Default::default(),
        }
        .build(case)
        .unwrap();
        net.set_mode(Mode::Train);
        net
    })
}
