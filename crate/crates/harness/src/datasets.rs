//! Locating and loading the on-disk datasets.
//!
//! MNIST is looked up in `<dir>/mnist/` and then `<dir>/`; CIFAR-10 in
//! `<dir>/cifar-10-batches-bin/` and then `<dir>/`.

use std::path::{Path, PathBuf};

use handnet::data::{load_cifar10, load_idx, LabeledImageSet};

use crate::config::Dataset;
use crate::error::{HarnessError, Result};

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_META_FILE: &str = "batches.meta.txt";

pub struct Splits {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

fn find_dir(root: &Path, sub: &str, probe: &str) -> Option<PathBuf> {
    [root.join(sub), root.to_path_buf()]
        .into_iter()
        .find(|d| d.join(probe).is_file())
}

pub fn mnist_dir(root: &Path) -> Option<PathBuf> {
    find_dir(root, "mnist", MNIST_FILES[0])
}

pub fn cifar_dir(root: &Path) -> Option<PathBuf> {
    find_dir(root, "cifar-10-batches-bin", CIFAR_TEST_FILE)
}

pub fn load_mnist(root: &Path) -> Result<Splits> {
    let dir = mnist_dir(root).ok_or_else(|| HarnessError::MissingData(format!("{} (mnist)", root.display())))?;
    Ok(Splits {
        train: load_idx(dir.join(MNIST_FILES[0]), dir.join(MNIST_FILES[1]))?,
        test: load_idx(dir.join(MNIST_FILES[2]), dir.join(MNIST_FILES[3]))?,
    })
}

pub fn load_cifar(root: &Path) -> Result<Splits> {
    let dir = cifar_dir(root).ok_or_else(|| HarnessError::MissingData(format!("{} (cifar-10)", root.display())))?;
    let meta = dir.join(CIFAR_META_FILE);
    let meta = meta.is_file().then_some(meta);
    let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    Ok(Splits {
        train: load_cifar10(&train, meta.as_deref())?,
        test: load_cifar10(&[dir.join(CIFAR_TEST_FILE)], meta.as_deref())?,
    })
}

pub fn load(dataset: Dataset, root: &Path) -> Result<Splits> {
    match dataset {
        Dataset::Mnist => load_mnist(root),
        Dataset::Cifar10 => load_cifar(root),
    }
}
