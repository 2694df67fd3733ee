//! Randomized invariants.

use handnet::data::{decode_one_hot, one_hot, one_hot_rows};
use handnet::layers::{dropout_forward, maxpool_backward, maxpool_forward, softmax, softmax_xent};
use handnet::metrics::{prf1, ConfusionMatrix, MetricsReport};
use handnet::optim::adadelta_step;
use handnet::tensor::matmul_t;
use handnet::{HyperParams, Mode, OptimizerState, Parameter, RandomSource, Shape, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::from_dims(&dims, v).unwrap())
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn reshape_round_trip(
        (dims, data) in prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|d| {
            let n: usize = d.iter().product();
            (Just(d), prop::collection::vec(-1e3f64..1e3, n))
        }),
        split in 1usize..4,
    ) {
        let t = Tensor::from_dims(&dims, data).unwrap();
        let n = t.numel();
        let alt = if n.is_multiple_of(split) { vec![split, n / split] } else { vec![n] };
        let back = t.reshape(Shape::new(alt).unwrap()).unwrap().reshape(t.shape().clone()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn matmul_is_associative(a in tensor(vec![3, 3], -1.0, 1.0), b in tensor(vec![3, 3], -1.0, 1.0), c in tensor(vec![3, 3], -1.0, 1.0)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let a = Tensor::rand_uniform(&mut rng, Shape::new([m, k]).unwrap(), -1.0, 1.0).unwrap();
        let b = Tensor::rand_uniform(&mut rng, Shape::new([k, n]).unwrap(), -1.0, 1.0).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in a.matmul(&b).unwrap().data().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        // transposed operands agree with explicit transposes
        let at = Tensor::from_dims(&[k, m], (0..k * m).map(|i| a.data()[(i % m) * k + i / m]).collect()).unwrap();
        let via_t = matmul_t(&at, true, &b, false).unwrap();
        for (x, y) in via_t.data().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, logits in prop::collection::vec(-50f64..50.0, 60)) {
        let z = Tensor::from_dims(&[rows, 10], logits[..rows * 10].to_vec()).unwrap();
        let p = softmax(&z).unwrap();
        for row in p.data().chunks(10) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let labels: Vec<usize> = (0..rows).map(|r| r * 7 % 10).collect();
        let (loss, grad) = softmax_xent(&z, &one_hot_rows(&labels).unwrap()).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        for row in grad.data().chunks(10) {
            prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn maxpool_routes_each_upstream_value_once(
        n in 1usize..3, c in 1usize..3, oh in 1usize..4, ow in 1usize..4, window in 1usize..4, seed in any::<u64>(),
    ) {
        let mut rng = RandomSource::new(seed);
        let shape = Shape::new([n, c, oh * window, ow * window]).unwrap();
        let x = Tensor::rand_uniform(&mut rng, shape.clone(), -1.0, 1.0).unwrap();
        let (y, argmax) = maxpool_forward(&x, window, window).unwrap();
        prop_assert_eq!(y.dims(), &[n, c, oh, ow]);
        let up = Tensor::rand_uniform(&mut rng, y.shape().clone(), -1.0, 1.0).unwrap();
        let dx = maxpool_backward(&up, &argmax, &shape).unwrap();
        let abs_sum = |t: &Tensor| t.data().iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!((abs_sum(&dx) - abs_sum(&up)).abs() <= 1e-12);
        prop_assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), up.numel());
        for (o, &src) in argmax.iter().enumerate() {
            prop_assert_eq!(x.data()[src], y.data()[o]);
        }
    }

    #[test]
    fn one_hot_round_trip(labels in prop::collection::vec(0usize..10, 1..40)) {
        let rows = one_hot_rows(&labels).unwrap();
        for (row, &l) in rows.data().chunks(10).zip(&labels) {
            prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 9);
            prop_assert_eq!(decode_one_hot(row), Some(l));
        }
        for &l in &labels {
            prop_assert_eq!(decode_one_hot(one_hot(l).unwrap().data()), Some(l));
        }
    }

    #[test]
    fn metric_identities(pairs in prop::collection::vec((0usize..10, 0usize..10), 1..300)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let report = MetricsReport::from_predictions(&pred, &truth).unwrap();
        prop_assert_eq!(report.confusion.total(), pred.len() as u64);
        prop_assert!((report.micro_recall() - (100.0 - report.error_rate)).abs() <= 1e-9);
        let cm = ConfusionMatrix::from_predictions(&pred, &truth).unwrap();
        for class in 0..10 {
            let s = prf1(&cm, class);
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
            }
            if s.precision > 0.0 && s.recall > 0.0 {
                prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-9);
                prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-9);
                let harmonic = 2.0 * s.precision * s.recall / (s.precision + s.recall);
                prop_assert!((s.f1 - harmonic).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn adadelta_averages_stay_non_negative(grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..30)) {
        let mut params = vec![Parameter::new("w", Tensor::zeros_of(&[4]).unwrap())];
        let mut state = OptimizerState::for_params(&params);
        for g in grads {
            params[0].grad.data_mut().copy_from_slice(&g);
            adadelta_step(&mut params, &mut state, &HyperParams::default()).unwrap();
            prop_assert!(state.sq_grad[0].data().iter().all(|&v| v >= 0.0));
            prop_assert!(state.sq_update[0].data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn random_source_is_reproducible(seed in any::<u64>(), stream in 0u64..100) {
        let mut a = RandomSource::with_stream(seed, stream);
        let mut b = RandomSource::with_stream(seed, stream);
        for _ in 0..32 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let u = a.uniform();
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert!(a.below(7) < 7);
        let mut p = a.permutation(20);
        p.sort_unstable();
        prop_assert_eq!(p, (0..20).collect::<Vec<_>>());
    }
}

#[test]
fn dropout_preserves_the_mean() {
    let mut rng = RandomSource::new(7);
    let x = Tensor::filled(Shape::new([200_000]).unwrap(), 1.0);
    for rate in [0.1, 0.5, 0.8] {
        let (y, mask) = dropout_forward(&x, rate, &mut rng, Mode::Train).unwrap();
        assert!(mask.is_some());
        let mean = y.data().iter().sum::<f64>() / y.numel() as f64;
        assert!((mean - 1.0).abs() < 0.02, "rate {rate}: mean {mean}");
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.numel() as f64;
        assert!((dropped - rate).abs() < 0.01, "rate {rate}: dropped {dropped}");
    }
    let (y, mask) = dropout_forward(&x, 0.5, &mut rng, Mode::Eval).unwrap();
    assert!(mask.is_none());
    assert_eq!(y, x);
}

#[test]
fn invalid_shapes_rejected() {
    assert!(Shape::new([2, 0]).is_err());
    assert!(Shape::new(Vec::<usize>::new()).is_err());
    assert!(Tensor::from_dims(&[2, 2], vec![0.0; 3]).is_err());
}
