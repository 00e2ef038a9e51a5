//! Datasets, IDX ingestion, and task-sequence generators.
//!
//! A [`Dataset`] owns its feature rows behind an `Arc`, so permuted tasks
//! share the base pixels and only carry their own index permutation.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conceptor::FeatureBatch;
use crate::error::{Error, Result};
use crate::random::orthogonal_matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_TRAIN: usize = 54_000;
pub const MNIST_VALIDATION: usize = 6_000;
pub const MNIST_TEST: usize = 10_000;
const MNIST_SPLIT_SEED: u64 = 0x5EED;

/// Pixel mean and standard deviation of the MNIST training images after scaling by 1/255.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

/// Input scaling for the MNIST benchmark.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScaling {
    /// `p / 255`, values in `[0, 1]`.
    #[default]
    Unit,
    /// `(p / 255 - MNIST_MEAN) / MNIST_STD`.
    Standardize,
}

impl PixelScaling {
    pub fn apply(self, unit: f64) -> f64 {
        match self {
            PixelScaling::Unit => unit,
            PixelScaling::Standardize => (unit - MNIST_MEAN) / MNIST_STD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Labelled samples with train/validation/test index lists.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Arc<Vec<f64>>,
    labels: Arc<Vec<usize>>,
    dim: usize,
    classes: usize,
    splits: Arc<Splits>,
    /// Column `j` of a row reads base feature `permutation[j]`.
    permutation: Option<Arc<Vec<usize>>>,
}

impl Dataset {
    /// `features` is row-major `labels.len() x dim`.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize, splits: Splits) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::param("dataset", "dimension and class count must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "{} feature values for {} samples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature at flat index {pos}")));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Data(format!("sample {i} has label {y} outside 0..{classes}")));
        }
        check_splits(&splits, labels.len())?;
        Ok(Self {
            features: Arc::new(features),
            labels: Arc::new(labels),
            dim,
            classes,
            splits: Arc::new(splits),
            permutation: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn split(&self, split: Split) -> &[usize] {
        self.splits.get(split)
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref().map(Vec::as_slice)
    }

    /// Same samples and splits, new split assignment.
    pub fn with_splits(&self, splits: Splits) -> Result<Self> {
        check_splits(&splits, self.len())?;
        Ok(Self {
            splits: Arc::new(splits),
            ..self.clone()
        })
    }

    /// Applies `permutation` to the feature columns, composing with any
    /// permutation already present.
    pub fn permuted(&self, permutation: Vec<usize>) -> Result<Self> {
        if !is_permutation(&permutation, self.dim) {
            return Err(Error::param("permutation", format!("not a permutation of 0..{}", self.dim)));
        }
        let composed = match &self.permutation {
            None => permutation,
            Some(prev) => permutation.iter().map(|&j| prev[j]).collect(),
        };
        Ok(Self {
            permutation: Some(Arc::new(composed)),
            ..self.clone()
        })
    }

    pub fn row(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.write_row(index, &mut out);
        out
    }

    fn write_row(&self, index: usize, out: &mut [f64]) {
        let base = &self.features[index * self.dim..(index + 1) * self.dim];
        match &self.permutation {
            None => out.copy_from_slice(base),
            Some(p) => {
                for (o, &src) in out.iter_mut().zip(p.iter()) {
                    *o = base[src];
                }
            }
        }
    }

    /// Stacks the given samples into a `len x dim` matrix plus their labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(DMatrix<f64>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::param("indices", "cannot gather an empty batch"));
        }
        let mut flat = vec![0.0; indices.len() * self.dim];
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::param("indices", format!("sample {i} out of range 0..{}", self.len())));
            }
            self.write_row(i, &mut flat[r * self.dim..(r + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
        Ok((DMatrix::from_row_slice(indices.len(), self.dim, &flat), labels))
    }

    pub fn gather_batch(&self, indices: &[usize]) -> Result<(FeatureBatch, Vec<usize>)> {
        let (x, y) = self.gather(indices)?;
        Ok((FeatureBatch::new(x)?, y))
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &j in p {
        if j >= n || seen[j] {
            return false;
        }
        seen[j] = true;
    }
    true
}

fn check_splits(splits: &Splits, len: usize) -> Result<()> {
    let mut owner = vec![false; len];
    for (name, idx) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        for &i in idx {
            if i >= len {
                return Err(Error::Data(format!("{name} split index {i} out of range 0..{len}")));
            }
            if owner[i] {
                return Err(Error::Data(format!("sample {i} appears in more than one split slot ({name})")));
            }
            owner[i] = true;
        }
    }
    Ok(())
}

/// How a task sequence was generated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceOrigin {
    Permuted { seed: u64 },
    Synthetic { seed: u64, overlap: f64, subspace_dim: usize },
    Custom,
}

/// Ordered tasks sharing one input dimension and class count.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    tasks: Vec<Dataset>,
    origin: SequenceOrigin,
}

impl TaskSequence {
    pub fn new(tasks: Vec<Dataset>, origin: SequenceOrigin) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::param("tasks", "a task sequence needs at least one task"))?;
        for (t, task) in tasks.iter().enumerate() {
            if task.dim() != first.dim() || task.classes() != first.classes() {
                return Err(Error::Data(format!(
                    "task {t} has dim {} / {} classes, expected {} / {}",
                    task.dim(),
                    task.classes(),
                    first.dim(),
                    first.classes()
                )));
            }
        }
        Ok(Self { tasks, origin })
    }

    pub fn tasks(&self) -> &[Dataset] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn origin(&self) -> &SequenceOrigin {
        &self.origin
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    pub fn classes(&self) -> usize {
        self.tasks[0].classes()
    }

    /// First `count` tasks only.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::param("tasks", format!("cannot keep {count} of {} tasks", self.len())));
        }
        Self::new(self.tasks[..count].to_vec(), self.origin.clone())
    }
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let payload = checked_payload(bytes, 16, count * rows * cols)?;
    Ok((count, rows, cols, payload))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    checked_payload(bytes, 8, count)
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
        offset: bytes.len(),
        reason: format!("truncated header, need 4 bytes at offset {offset}"),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn checked_payload(bytes: &[u8], header: usize, expected: usize) -> Result<&[u8]> {
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(Error::Format {
            offset: bytes.len(),
            reason: format!("truncated payload: {expected} bytes declared, {actual} present"),
        });
    }
    if actual > expected {
        return Err(Error::Format {
            offset: header + expected,
            reason: format!("{} trailing bytes after the declared payload", actual - expected),
        });
    }
    Ok(&bytes[header..])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; every sample
/// lands in the train split.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    dataset_from_idx(&image_bytes, &label_bytes)
}

pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != count {
        return Err(Error::Data(format!("{count} images but {} labels", labels.len())));
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
    Dataset::new(
        features,
        rows * cols,
        labels,
        10,
        Splits {
            train: (0..count).collect(),
            ..Splits::default()
        },
    )
}

/// The 60k training and 10k test files of `dir`, split 54000/6000/10000.
/// The validation split is the tail of a fixed-seed shuffle of the training images.
pub fn load_mnist_benchmark(dir: &Path, scaling: PixelScaling) -> Result<Dataset> {
    let train = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    if train.len() != MNIST_TRAIN + MNIST_VALIDATION || test.len() != MNIST_TEST {
        return Err(Error::Data(format!(
            "expected 60000 train and 10000 test images, found {} and {}",
            train.len(),
            test.len()
        )));
    }
    let mut features = Vec::with_capacity((train.len() + test.len()) * train.dim());
    features.extend(train.features.iter().chain(test.features.iter()).map(|&v| scaling.apply(v)));
    let mut labels = train.labels.to_vec();
    labels.extend_from_slice(&test.labels);

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(MNIST_SPLIT_SEED));
    let validation = order.split_off(MNIST_TRAIN);
    let splits = Splits {
        train: order,
        validation,
        test: (train.len()..train.len() + test.len()).collect(),
    };
    Dataset::new(features, train.dim(), labels, 10, splits)
}

/// Task 1 is `base` itself; tasks 2..=T permute the input features with
/// independent seeded permutations shared by all splits of that task.
pub fn permuted_tasks(base: &Dataset, tasks: usize, seed: u64) -> Result<TaskSequence> {
    if tasks == 0 {
        return Err(Error::param("tasks", "need at least one task"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tasks);
    out.push(base.clone());
    for _ in 1..tasks {
        let mut perm: Vec<usize> = (0..base.dim()).collect();
        perm.shuffle(&mut rng);
        out.push(base.permuted(perm)?);
    }
    TaskSequence::new(out, SequenceOrigin::Permuted { seed })
}

/// Tasks whose inputs are Gaussian inside a `n/4`-dimensional subspace of
/// `R^n`. Consecutive subspaces share `floor(overlap * n/4)` basis vectors.
/// Labels are binary, given by the sign of a task-specific linear form.
pub fn synthetic_subspace_tasks(
    n: usize,
    tasks: usize,
    overlap: f64,
    samples_per_task: usize,
    seed: u64,
) -> Result<TaskSequence> {
    if n < 4 {
        return Err(Error::param("n", format!("must be at least 4, got {n}")));
    }
    if tasks < 2 {
        return Err(Error::param("tasks", format!("must be at least 2, got {tasks}")));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::param("overlap", format!("must lie in [0, 1], got {overlap}")));
    }
    if samples_per_task < 10 {
        return Err(Error::param("samples_per_task", format!("must be at least 10, got {samples_per_task}")));
    }
    let d = n / 4;
    let shared = (overlap * d as f64).floor() as usize;
    let stride = d - shared;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = orthogonal_matrix(n, &mut rng);

    let n_train = samples_per_task * 7 / 10;
    let n_val = samples_per_task / 10;
    let splits = Splits {
        train: (0..n_train).collect(),
        validation: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..samples_per_task).collect(),
    };

    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let cols: Vec<usize> = (0..d).map(|j| (t * stride + j) % n).collect();
        let rule: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut features = Vec::with_capacity(samples_per_task * n);
        let mut labels = Vec::with_capacity(samples_per_task);
        for _ in 0..samples_per_task {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let score: f64 = z.iter().zip(&rule).map(|(a, b)| a * b).sum();
            labels.push(usize::from(score > 0.0));
            for r in 0..n {
                features.push(cols.iter().zip(&z).map(|(&c, zj)| frame[(r, c)] * zj).sum());
            }
        }
        out.push(Dataset::new(features, n, labels, 2, splits.clone())?);
    }
    TaskSequence::new(
        out,
        SequenceOrigin::Synthetic {
            seed,
            overlap,
            subspace_dim: d,
        },
    )
}

/// `size` samples of `split` drawn without replacement from a fresh shuffle.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    split: Split,
    size: usize,
    rng: &mut R,
) -> Result<(FeatureBatch, Vec<usize>)> {
    let pool = dataset.split(split);
    if size == 0 || size > pool.len() {
        return Err(Error::param(
            "size",
            format!("cannot draw {size} samples from a split of {}", pool.len()),
        ));
    }
    let chosen: Vec<usize> = pool.choose_multiple(rng, size).copied().collect();
    dataset.gather_batch(&chosen)
}

/// One shuffled pass over a split in minibatches of `batch_size`; a trailing
/// partial batch is dropped.
pub fn epoch_batches<R: Rng + ?Sized>(
    dataset: &Dataset,
    split: Split,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let pool = dataset.split(split);
    if batch_size == 0 || batch_size > pool.len() {
        return Err(Error::param(
            "batch_size",
            format!("cannot cut batches of {batch_size} from a split of {}", pool.len()),
        ));
    }
    let mut order = pool.to_vec();
    order.shuffle(rng);
    Ok(order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect())
}
