//! Analytic gradients against central finite differences.
//!
//! Each layer kernel is checked through the scalar `L = Σ y ⊙ R` for a fixed
//! random `R`, whose gradient with respect to `y` is `R` itself. Whole
//! networks are checked through the mean cross-entropy.

mod checks;
mod oracle;

use checks::gradients::{self as grad, NetworkCheck};
use oracle::REL_TOL;

const CASES: u64 = 24;

fn assert_kernel(name: &str, worst: f64) {
    assert!(worst < REL_TOL, "{name}: {worst:e}");
}

fn assert_network(name: &str, r: &NetworkCheck) {
    assert!(r.passed(), "{name}: {r:?}");
}

#[test]
fn dense_gradients() {
    assert_kernel("dense", grad::dense(CASES));
}

#[test]
fn relu_gradients() {
    assert_kernel("relu", grad::relu(CASES));
}

#[test]
fn conv2d_gradients() {
    assert_kernel("conv2d", grad::conv2d(CASES));
}

#[test]
fn maxpool_gradients() {
    assert_kernel("maxpool", grad::maxpool(CASES));
}

#[test]
fn dropout_gradients_eval_and_fixed_mask() {
    assert_kernel("dropout", grad::dropout(CASES));
}

#[test]
fn softmax_xent_gradients() {
    assert_kernel("softmax xent", grad::softmax_xent_loss(CASES));
}

#[test]
fn logistic_network_gradients() {
    assert_network("logistic", &grad::logistic(CASES));
}

#[test]
fn mnist_cnn_network_gradients() {
    assert_network("mnist cnn", &grad::mnist_cnn(20));
}

#[test]
fn cifar_cnn_network_gradients_with_dropout() {
    assert_network("cifar cnn", &grad::cifar_cnn(CASES));
}
