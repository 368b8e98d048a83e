//! Image datasets, task streams and episodic memory.
//!
//! A [`Dataset`] is a view: a shared pixel store plus a row selection, a label
//! vector and a pipeline of pixel operations that are applied when examples
//! are read. Twenty rotated copies of MNIST therefore share one 47 MB byte
//! buffer instead of occupying 7 GB of `f64`.

mod idx;
mod replay;
mod stream;
mod transform;

use std::sync::Arc;

pub use idx::{load_idx, load_idx_dir};
pub use replay::{per_class_sample, PerClassSample, ReplayBuffer, ReplayItem};
pub use stream::{
    build_stream, permutation_specs, rotation_specs, DatasetRegistry, RotationSchedule, Task, TaskSpec,
    TaskStream,
};
pub use transform::{apply_transform, pixel_permutation, removed_classes, TaskTransform};

use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::model::Batch;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug)]
enum Pixels {
    /// Raw bytes, read as `b / 255`.
    Bytes(Vec<u8>),
    Real(Vec<f64>),
}

#[derive(Debug)]
struct ImageStore {
    width: usize,
    pixels: Pixels,
}

impl ImageStore {
    fn read_row(&self, row: usize, out: &mut [f64]) {
        let span = row * self.width..(row + 1) * self.width;
        match &self.pixels {
            Pixels::Bytes(b) => {
                for (o, &v) in out.iter_mut().zip(&b[span]) {
                    *o = v as f64 / 255.0;
                }
            }
            Pixels::Real(r) => out.copy_from_slice(&r[span]),
        }
    }
}

/// A pixel operation applied on read.
#[derive(Clone, Debug)]
pub(crate) enum PixelOp {
    /// `(source index, weight)` lists, one per output pixel.
    Resample(Arc<Vec<Vec<(u32, f64)>>>),
    /// `out[j] = in[perm[j]]`.
    Permute(Arc<Vec<u32>>),
    /// Additive i.i.d. normal noise keyed by base row, then clamped to [0, 1].
    Noise { mean: f64, std: f64, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    split: Split,
    num_classes: usize,
    store: Arc<ImageStore>,
    rows: Arc<Vec<u32>>,
    labels: Arc<Vec<usize>>,
    ops: Vec<PixelOp>,
}

impl Dataset {
    pub fn from_matrix(
        name: impl Into<String>,
        split: Split,
        images: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        ensure!(
            images.rows() == labels.len(),
            "{} images but {} labels",
            images.rows(),
            labels.len()
        );
        ensure!(
            labels.iter().all(|&l| l < num_classes),
            "label out of range for {num_classes} classes"
        );
        let width = images.cols();
        let n = images.rows();
        Ok(Dataset {
            name: name.into(),
            split,
            num_classes,
            store: Arc::new(ImageStore {
                width,
                pixels: Pixels::Real(images.into_data()),
            }),
            rows: Arc::new((0..n as u32).collect()),
            labels: Arc::new(labels),
            ops: Vec::new(),
        })
    }

    pub(crate) fn from_bytes(
        name: String,
        split: Split,
        width: usize,
        bytes: Vec<u8>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Self {
        let n = labels.len();
        Dataset {
            name,
            split,
            num_classes,
            store: Arc::new(ImageStore {
                width,
                pixels: Pixels::Bytes(bytes),
            }),
            rows: Arc::new((0..n as u32).collect()),
            labels: Arc::new(labels),
            ops: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Pixels per image.
    pub fn width(&self) -> usize {
        self.store.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn write_image(&self, i: usize, out: &mut [f64]) {
        let base = self.rows[i] as usize;
        self.store.read_row(base, out);
        if self.ops.is_empty() {
            return;
        }
        let mut scratch = vec![0.0; out.len()];
        for op in &self.ops {
            match op {
                PixelOp::Resample(table) => {
                    scratch.copy_from_slice(out);
                    for (o, taps) in out.iter_mut().zip(table.iter()) {
                        let v: f64 = taps.iter().map(|&(s, w)| w * scratch[s as usize]).sum();
                        *o = v.clamp(0.0, 1.0);
                    }
                }
                PixelOp::Permute(perm) => {
                    scratch.copy_from_slice(out);
                    for (o, &p) in out.iter_mut().zip(perm.iter()) {
                        *o = scratch[p as usize];
                    }
                }
                PixelOp::Noise { mean, std, seed } => {
                    let mut rng = Rng::new(*seed).substream_indexed("pixel-noise", base as u64);
                    for o in out.iter_mut() {
                        *o = (*o + mean + std * rng.normal()).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.write_image(i, &mut out);
        out
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let w = self.width();
        let mut data = vec![0.0; indices.len() * w];
        for (row, &i) in data.chunks_exact_mut(w.max(1)).zip(indices) {
            ensure!(i < self.len(), "example index {i} out of range");
            self.write_image(i, row);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(Matrix::new(indices.len(), w, data)?, labels)
    }

    /// All images as an `N × width` matrix.
    pub fn images(&self) -> Matrix {
        let w = self.width();
        let mut data = vec![0.0; self.len() * w];
        for (i, row) in data.chunks_exact_mut(w.max(1)).enumerate() {
            self.write_image(i, row);
        }
        Matrix::new(self.len(), w, data).expect("consistent shape")
    }

    /// Consecutive batches of at most `size` examples, in index order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.batch(&idx).expect("in-range indices")
        })
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        ensure!(
            indices.iter().all(|&i| i < self.len()),
            "subset index out of range"
        );
        let mut ds = self.clone();
        ds.rows = Arc::new(indices.iter().map(|&i| self.rows[i]).collect());
        ds.labels = Arc::new(indices.iter().map(|&i| self.labels[i]).collect());
        Ok(ds)
    }

    /// The first `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx).expect("in range")
    }

    /// `k` uniformly drawn examples without replacement.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Dataset {
        let mut idx = rng.sample_indices(self.len(), k);
        idx.sort_unstable();
        self.subset(&idx).expect("in range")
    }

    /// Applies a pixel permutation (`out[j] = in[perm[j]]`).
    pub fn permute_pixels(&self, perm: &[usize]) -> Result<Dataset> {
        let w = self.width();
        ensure!(perm.len() == w, "permutation length {} != width {w}", perm.len());
        let mut seen = vec![false; w];
        for &p in perm {
            ensure!(p < w && !seen[p], "not a permutation of 0..{w}");
            seen[p] = true;
        }
        let mut ds = self.clone();
        ds.ops
            .push(PixelOp::Permute(Arc::new(perm.iter().map(|&p| p as u32).collect())));
        Ok(ds)
    }

    pub(crate) fn with_op(&self, op: PixelOp) -> Dataset {
        let mut ds = self.clone();
        ds.ops.push(op);
        ds
    }

    pub(crate) fn with_labels(&self, labels: Vec<usize>) -> Dataset {
        let mut ds = self.clone();
        ds.labels = Arc::new(labels);
        ds
    }

    pub(crate) fn renamed(&self, name: String) -> Dataset {
        let mut ds = self.clone();
        ds.name = name;
        ds
    }
}

/// Several datasets of equal width addressed as one index space.
#[derive(Clone, Debug)]
pub struct DatasetUnion<'a> {
    parts: Vec<&'a Dataset>,
    /// Start index of each part, plus the total length.
    offsets: Vec<usize>,
}

impl<'a> DatasetUnion<'a> {
    pub fn new(parts: Vec<&'a Dataset>) -> Result<Self> {
        ensure!(!parts.is_empty(), "empty dataset union");
        let w = parts[0].width();
        ensure!(parts.iter().all(|p| p.width() == w), "datasets in a union must share a width");
        let mut offsets = vec![0];
        for p in &parts {
            offsets.push(offsets.last().unwrap() + p.len());
        }
        Ok(DatasetUnion { parts, offsets })
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Part index and position within it.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let part = self.offsets.partition_point(|&o| o <= i) - 1;
        (part, i - self.offsets[part])
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let w = self.parts[0].width();
        let mut data = vec![0.0; indices.len() * w];
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in data.chunks_exact_mut(w.max(1)).zip(indices) {
            ensure!(i < self.len(), "union index {i} out of range");
            let (p, j) = self.locate(i);
            self.parts[p].write_image(j, row);
            labels.push(self.parts[p].label(j));
        }
        Batch::new(Matrix::new(indices.len(), w, data)?, labels)
    }
}
