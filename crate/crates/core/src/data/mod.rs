//! Datasets, file formats and result artifacts.
//!
//! Inputs are stored exactly as loaded (pixels in `[0,1]`, no bias
//! coordinate); the model appends its own bias coordinate.

mod checkpoint;
mod csv;
mod idx;
mod plot;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use csv::{
    read_curve_csv, write_certification_csv, write_curve_csv, write_metrics_csv,
    write_sigma_trace_csv, CERTIFICATION_HEADER, CURVE_HEADER, METRICS_HEADER, SIGMA_HEADER,
};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, IdxImages};
pub use plot::{emit_plot, render_svg, PlotSeries};

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// A labelled sample set: one row of `inputs` per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    name: String,
    k: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, name: impl Into<String>, k: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} ≥ class count {k}")));
        }
        Ok(Self {
            inputs,
            labels,
            name: name.into(),
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features per example.
    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut entries = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} examples",
                    self.len()
                )));
            }
            entries.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(Matrix::new(indices.len(), d, entries)?, labels, self.name.clone(), self.k)
    }

    /// First `at` examples and the rest.
    pub fn split(&self, at: usize) -> Result<(Dataset, Dataset)> {
        if at > self.len() {
            return Err(Error::InvalidArgument(format!("split point {at} > {}", self.len())));
        }
        let head: Vec<usize> = (0..at).collect();
        let tail: Vec<usize> = (at..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// Sorted indices of `count` distinct examples chosen with `seed`.
    pub fn sample_indices(&self, count: usize, seed: u64) -> Result<Vec<usize>> {
        if count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {count} of {} examples",
                self.len()
            )));
        }
        let mut picked = index::sample(&mut rng::stream(seed), self.len(), count).into_vec();
        picked.sort_unstable();
        Ok(picked)
    }

    /// [`subset`](Self::subset) of [`sample_indices`](Self::sample_indices).
    pub fn subsample(&self, count: usize, seed: u64) -> Result<Dataset> {
        self.subset(&self.sample_indices(count, seed)?)
    }
}

/// `k` Gaussian clusters in `[0,1]^d`.
///
/// Centers are uniform on the unit sphere, mapped into the cube by
/// `c ↦ (c + 1) / 2`; points are `center + spread · N(0, I)` clipped to the
/// cube. Example `i` belongs to cluster `i mod k`, so classes are balanced
/// to within one.
pub fn synth_blobs(k: usize, d: usize, m: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || d == 0 {
        return Err(Error::InvalidArgument("need k ≥ 2 classes and d ≥ 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be ≥ 0, got {spread}")));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, &[0x5eed]));
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut c: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = crate::linalg::norm2(&c).max(f64::MIN_POSITIVE);
            for v in &mut c {
                *v = (*v / norm + 1.0) / 2.0;
            }
            c
        })
        .collect();
    let mut entries = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let y = i % k;
        for &c in &centers[y] {
            let z: f64 = StandardNormal.sample(&mut rng);
            entries.push((c + spread * z).clamp(0.0, 1.0));
        }
        labels.push(y);
    }
    Dataset::new(Matrix::new(m, d, entries)?, labels, format!("blobs-k{k}-d{d}"), k)
}
