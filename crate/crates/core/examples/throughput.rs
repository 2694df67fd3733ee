//! Training throughput of the stock architectures on random batches of 32.
//!
//! ```text
//! cargo run --release -p handnet --example throughput
//! ```

use std::time::Instant;

use handnet::data::one_hot_rows;
use handnet::{Architecture, HyperParams, Optimizer, OptimizerKind, RandomSource, Shape, Tensor};

const BATCH: usize = 32;

fn samples_per_sec(arch: &Architecture, steps: usize) -> f64 {
    let mut net = arch.build(7).unwrap();
    let mut dims = vec![BATCH];
    dims.extend(arch.input_dims());
    let mut rng = RandomSource::new(1);
    let x = Tensor::rand_uniform(&mut rng, Shape::new(dims).unwrap(), 0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 10).collect();
    let y = one_hot_rows(&labels).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, net.params());
    let hp = HyperParams::with_lr(0.01);
    let start = Instant::now();
    for _ in 0..steps {
        net.loss_and_backward(&x, &y, &mut rng).unwrap();
        opt.step(net.params_mut(), &hp).unwrap();
    }
    (steps * BATCH) as f64 / start.elapsed().as_secs_f64()
}

fn main() {
    let runs = [
        (Architecture::Mlp { hidden: 784 }, 50),
        (Architecture::Mlp { hidden: 12544 }, 5),
        (Architecture::MnistCnn { hidden: 784 }, 10),
        (Architecture::MnistCnn { hidden: 12544 }, 3),
        (
            Architecture::CifarCnn {
                dropout: Some(0.5),
                placement: Default::default(),
            },
            10,
        ),
    ];
    for (arch, steps) in runs {
        println!("{:>8.0} samples/s  {arch:?}", samples_per_sec(&arch, steps));
    }
}
