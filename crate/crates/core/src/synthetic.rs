//! Small learnable stand-ins for MNIST and CIFAR-10.
//!
//! Each class gets a fixed random prototype of a few bright blobs; samples
//! are the prototype shifted by up to two pixels plus uniform noise,
//! quantized to bytes. The output is written in the real on-disk formats so
//! the full loader path is exercised.

use std::fs;
use std::path::Path;

use crate::data::writers;
use crate::error::Result;
use crate::metrics::NUM_CLASSES;
use crate::rng::RandomSource;

fn prototypes(rng: &mut RandomSource, channels: usize, side: usize) -> Vec<Vec<f64>> {
    (0..NUM_CLASSES)
        .map(|_| {
            let mut img = vec![0.0; channels * side * side];
            for _ in 0..4 {
                let (cy, cx) = (rng.uniform_in(4.0, side as f64 - 4.0).unwrap(), rng.uniform_in(4.0, side as f64 - 4.0).unwrap());
                let r = rng.uniform_in(2.0, 4.5).unwrap();
                let c = rng.below(channels);
                for y in 0..side {
                    for x in 0..side {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let v = (-d2 / (r * r)).exp();
                        let px = &mut img[(c * side + y) * side + x];
                        *px = f64::max(*px, v);
                    }
                }
            }
            img
        })
        .collect()
}

/// `n` images of `channels×side×side` bytes plus labels, balanced over the
/// ten classes and in shuffled order.
pub fn generate(n: usize, channels: usize, side: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut proto_rng = RandomSource::with_stream(seed, 1000);
    let protos = prototypes(&mut proto_rng, channels, side);
    let mut rng = RandomSource::with_stream(seed, 1001 + n as u64);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    rng.shuffle(&mut labels);
    let mut pixels = Vec::with_capacity(n * channels * side * side);
    for &l in &labels {
        let p = &protos[l as usize];
        let dy = rng.below(5) as isize - 2;
        let dx = rng.below(5) as isize - 2;
        for c in 0..channels {
            for y in 0..side as isize {
                for x in 0..side as isize {
                    let (sy, sx) = (y - dy, x - dx);
                    let base = if sy >= 0 && sx >= 0 && (sy as usize) < side && (sx as usize) < side {
                        p[(c * side + sy as usize) * side + sx as usize]
                    } else {
                        0.0
                    };
                    let v = (base * 0.8 + 0.25 * rng.uniform()).clamp(0.0, 1.0);
                    pixels.push((v * 255.0).round() as u8);
                }
            }
        }
    }
    (pixels, labels)
}

/// Writes `train-*`/`t10k-*` IDX files with the canonical MNIST names.
pub fn write_mnist_like(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (px, lb) = generate(n_train, 1, 28, seed);
    writers::write_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        28,
        28,
        &px,
        &lb,
    )?;
    let (px, lb) = generate(n_test, 1, 28, seed);
    writers::write_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        28,
        28,
        &px,
        &lb,
    )?;
    Ok(())
}

/// Writes five `data_batch_*.bin` files of `per_batch` records, a
/// `test_batch.bin` of `n_test` records and `batches.meta.txt`.
pub fn write_cifar_like(dir: &Path, per_batch: usize, n_test: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (px, lb) = generate(per_batch * 5, 3, 32, seed);
    let stride = 3 * 32 * 32;
    for b in 0..5 {
        let r = b * per_batch..(b + 1) * per_batch;
        writers::write_cifar(
            &dir.join(format!("data_batch_{}.bin", b + 1)),
            &lb[r.clone()],
            &px[r.start * stride..r.end * stride],
        )?;
    }
    let (px, lb) = generate(n_test, 3, 32, seed);
    writers::write_cifar(&dir.join("test_batch.bin"), &lb, &px)?;
    fs::write(dir.join("batches.meta.txt"), crate::data::CIFAR_CLASSES.join("\n") + "\n")?;
    Ok(())
}
