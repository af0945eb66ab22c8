//! MNIST (IDX) and CIFAR-10 (binary batch) loaders, deterministic
//! train/validation splits, and seeded mini-batch iteration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const NUM_CLASSES: usize = 10;

/// Images in `[0,1]`, channel-major per sample, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[channels, height, width]` of one sample.
    pub sample_shape: [usize; 3],
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, sample_shape: [usize; 3], images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::dim(format!(
                "{} pixels do not form {} samples of shape {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input("pixel outside [0,1]".into()));
        }
        if labels.iter().any(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Input("label outside [0, 9]".into()));
        }
        Ok(Dataset {
            name: name.into(),
            sample_shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name.clone(),
            sample_shape: self.sample_shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Stacks the selected samples into a `[B, C, H, W]` tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| T::from_acc(p as f64)));
        }
        let [c, h, w] = self.sample_shape;
        let t = Tensor::new([indices.len(), c, h, w], data).expect("consistent batch shape");
        (t, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, format!("header truncated at byte {at}")))
}

/// Parses an IDX image file: magic, count, rows, cols, then `u8` pixels.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let pixels = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

/// Parses an IDX label file: magic, count, then `u8` labels.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let labels = bytes[8..].to_vec();
    if let Some(l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::format(path, format!("label {l} out of range")));
    }
    Ok(labels)
}

pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (n, rows, cols, pixels) = parse_idx_images(&read(ip)?, ip)?;
    let labels = parse_idx_labels(&read(lp)?, lp)?;
    if labels.len() != n {
        return Err(Error::format(lp, format!("{} labels for {n} images", labels.len())));
    }
    Dataset::new("mnist", [1, rows, cols], pixels, labels)
}

/// Loads `train-*` or `t10k-*` IDX files from a directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let dir = dir.as_ref();
    load_mnist_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Parses CIFAR-10 binary records: one label byte then R, G, B 32×32 planes.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::format(path, format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((images, labels))
}

pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let (im, lb) = parse_cifar10(&read(p)?, p)?;
        images.extend(im);
        labels.extend(lb);
    }
    Dataset::new("cifar10", [3, 32, 32], images, labels)
}

/// `data_batch_1..5.bin` for training, `test_batch.bin` otherwise.
pub fn cifar10_paths(dir: impl AsRef<Path>, train: bool) -> Vec<PathBuf> {
    let dir = dir.as_ref();
    if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}

/// Hold-out of `validation` samples from a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub validation: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec { validation: 5000, seed }
    }
}

/// `(train indices, validation indices)`: a seeded partition of `0..n`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.validation >= n {
        return Err(Error::Usage(format!(
            "validation count {} must be smaller than the set size {n}",
            spec.validation
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let val = idx.split_off(n - spec.validation);
    Ok((idx, val))
}

pub fn split(train: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (t, v) = split_indices(train.len(), spec)?;
    Ok((train.subset(&t), train.subset(&v)))
}

/// Sample order for one epoch, determined by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// One shuffled pass over a dataset in mini-batches; the last batch may be short.
pub struct Batches<'a, T> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _scalar: std::marker::PhantomData<T>,
}

pub fn batches<T: Scalar>(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_, T> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    Batches {
        dataset,
        order: epoch_order(dataset.len(), seed, epoch),
        batch_size,
        pos: 0,
        _scalar: std::marker::PhantomData,
    }
}

/// Unshuffled mini-batches, for evaluation.
pub fn sequential_batches<T: Scalar>(dataset: &Dataset, batch_size: usize) -> Batches<'_, T> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    Batches {
        dataset,
        order: (0..dataset.len()).collect(),
        batch_size,
        pos: 0,
        _scalar: std::marker::PhantomData,
    }
}

impl<T> Batches<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.dataset.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(out)
    }
}
