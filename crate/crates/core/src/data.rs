//! MNIST (IDX) and CIFAR-10 (binary batch) loaders, one-hot coding and
//! seeded mini-batching.
//!
//! Pixels are scaled by `1/255` into `[0, 1]`; no mean subtraction.
//! Images are stored `N×C×H×W`, which is the native byte order of both
//! formats (CIFAR records are already planar R, G, B).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::NUM_CLASSES;
use crate::rng::RandomSource;
use crate::tensor::{Shape, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// `t10k-*` and `test*` files are test data, everything else train.
    fn from_path(path: &Path) -> Split {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.starts_with("t10k") || name.starts_with("test") {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample dims `[C, H, W]`.
    pub fn image_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    fn image_len(&self) -> usize {
        self.image_dims().iter().product()
    }

    /// Stacks the given samples into a `b×C×H×W` tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let len = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::ShapeMismatch(format!("sample {i} out of {}", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(self.image_dims());
        Tensor::from_vec(Shape::new(dims)?, data)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let x = self.gather(indices)?;
        let y_index: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let y_onehot = one_hot_rows(&y_index)?;
        Ok(Batch { x, y_onehot, y_index })
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<LabeledImageSet> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Ok(LabeledImageSet {
            images: self.gather(&idx)?,
            labels: self.labels[..n].to_vec(),
            class_names: self.class_names.clone(),
            split: self.split,
        })
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y_onehot: Tensor,
    pub y_index: Vec<usize>,
}

/// Length-10 vector with `1.0` at `label`.
///
/// Index `d` encodes class `d`. (A bit string written most-significant
/// first, like `0000000001` for digit 0, is the same vector read right to
/// left.)
pub fn one_hot(label: usize) -> Result<Tensor> {
    if label >= NUM_CLASSES {
        return Err(Error::LabelRange(label));
    }
    let mut t = Tensor::zeros(Shape::new([NUM_CLASSES])?);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// Inverse of [`one_hot`]; `None` unless the row has exactly one `1` and
/// nine `0`s.
pub fn decode_one_hot(row: &[f64]) -> Option<usize> {
    if row.len() != NUM_CLASSES {
        return None;
    }
    let ones: Vec<usize> = (0..row.len()).filter(|&i| row[i] == 1.0).collect();
    let zeros = row.iter().filter(|&&v| v == 0.0).count();
    match ones.as_slice() {
        [i] if zeros == NUM_CLASSES - 1 => Some(*i),
        _ => None,
    }
}

pub fn one_hot_rows(labels: &[usize]) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::Empty("one-hot batch needs at least one label"));
    }
    let mut t = Tensor::zeros(Shape::new([labels.len(), NUM_CLASSES])?);
    for (r, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return Err(Error::LabelRange(l));
        }
        t.data_mut()[r * NUM_CLASSES + l] = 1.0;
    }
    Ok(t)
}

/// Lazily materialized mini-batches over a fixed seeded permutation.
pub struct Batches<'a> {
    set: &'a LabeledImageSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.set.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(b)
    }
}

/// Seeded permutation of the whole set, chunked into `batch_size` pieces;
/// the final short chunk is kept.
pub fn shuffled_batches<'a>(
    set: &'a LabeledImageSet,
    batch_size: usize,
    rng: &mut RandomSource,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
    }
    Ok(Batches {
        set,
        order: rng.permutation(set.len()),
        batch_size,
        pos: 0,
    })
}

fn read_u32_be(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn check_len(path: &Path, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Length {
            path: path.display().to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Parses an IDX image file (`0x00000803`, count, rows, cols, bytes) and its
/// label file (`0x00000801`, count, bytes).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_file(ip)?;
    if img.len() < 16 {
        return Err(Error::Length {
            path: ip.display().to_string(),
            expected: 16,
            found: img.len(),
        });
    }
    let magic = read_u32_be(&img, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(ip, format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32_be(&img, 4) as usize;
    let rows = read_u32_be(&img, 8) as usize;
    let cols = read_u32_be(&img, 12) as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(ip, format!("empty dimensions {n}x{rows}x{cols}")));
    }
    check_len(ip, 16 + n * rows * cols, img.len())?;

    let lab = read_file(lp)?;
    if lab.len() < 8 {
        return Err(Error::Length {
            path: lp.display().to_string(),
            expected: 8,
            found: lab.len(),
        });
    }
    let magic = read_u32_be(&lab, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(lp, format!("bad label magic {magic:#010x}")));
    }
    let nl = read_u32_be(&lab, 4) as usize;
    check_len(lp, 8 + nl, lab.len())?;
    if nl != n {
        return Err(Error::Consistency(format!("{n} images but {nl} labels")));
    }
    let labels = labels_from_bytes(&lab[8..])?;
    let pixels = img[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(LabeledImageSet {
        images: Tensor::from_vec(Shape::new([n, 1, rows, cols])?, pixels)?,
        labels,
        class_names: (0..NUM_CLASSES).map(|d| d.to_string()).collect(),
        split: Split::from_path(ip),
    })
}

fn labels_from_bytes(bytes: &[u8]) -> Result<Vec<usize>> {
    bytes
        .iter()
        .map(|&b| {
            let l = b as usize;
            if l < NUM_CLASSES {
                Ok(l)
            } else {
                Err(Error::LabelRange(l))
            }
        })
        .collect()
}

/// Concatenates CIFAR-10 binary batches (3073-byte records: label, 1024 R,
/// 1024 G, 1024 B). `meta_path`, when given, is `batches.meta.txt` with one
/// class name per line.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P], meta_path: Option<&Path>) -> Result<LabeledImageSet> {
    if batch_paths.is_empty() {
        return Err(Error::Empty("load_cifar10 needs at least one batch file"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let p = p.as_ref();
        let bytes = read_file(p)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(format_err(
                p,
                format!("length {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let l = rec[0] as usize;
            if l >= NUM_CLASSES {
                return Err(Error::LabelRange(l));
            }
            labels.push(l);
            pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let class_names = match meta_path {
        Some(m) => {
            let text = String::from_utf8(read_file(m)?).map_err(|_| format_err(m, "not UTF-8"))?;
            let names: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            if names.len() != NUM_CLASSES {
                return Err(format_err(m, format!("expected 10 class names, found {}", names.len())));
            }
            names
        }
        None => CIFAR_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    let n = labels.len();
    let split = Split::from_path(batch_paths[0].as_ref());
    Ok(LabeledImageSet {
        images: Tensor::from_vec(Shape::new([n, 3, CIFAR_SIDE, CIFAR_SIDE])?, pixels)?,
        labels,
        class_names,
        split,
    })
}

/// Writers for the two on-disk formats. Used to build test fixtures and the
/// synthetic datasets.
pub mod writers {
    use std::fs;
    use std::path::Path;

    use super::{CIFAR_PIXELS, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
    use crate::error::{Error, Result};

    pub fn idx_images_bytes(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
        assert_eq!(pixels.len(), n * rows * cols);
        let mut out = Vec::with_capacity(16 + pixels.len());
        for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    pub fn write_idx(
        images_path: &Path,
        labels_path: &Path,
        rows: usize,
        cols: usize,
        pixels: &[u8],
        labels: &[u8],
    ) -> Result<()> {
        fs::write(images_path, idx_images_bytes(labels.len(), rows, cols, pixels))?;
        fs::write(labels_path, idx_labels_bytes(labels))?;
        Ok(())
    }

    /// `planes` holds `labels.len()` images of 3072 bytes each (R, G, B planes).
    pub fn cifar_bytes(labels: &[u8], planes: &[u8]) -> Result<Vec<u8>> {
        if planes.len() != labels.len() * CIFAR_PIXELS {
            return Err(Error::ShapeMismatch("cifar planes length".into()));
        }
        let mut out = Vec::with_capacity(labels.len() * (CIFAR_PIXELS + 1));
        for (l, img) in labels.iter().zip(planes.chunks_exact(CIFAR_PIXELS)) {
            out.push(*l);
            out.extend_from_slice(img);
        }
        Ok(out)
    }

    pub fn write_cifar(path: &Path, labels: &[u8], planes: &[u8]) -> Result<()> {
        fs::write(path, cifar_bytes(labels, planes)?)?;
        Ok(())
    }
}
