//! Dataset ingestion, augmentation and pattern image export.

mod augment;
mod cifar;
mod mnist;
mod pnm;

pub use augment::{augment, augment_with, Crop};
pub use cifar::load_cifar10;
pub use mnist::{load_mnist, read_idx_images, read_idx_labels};
pub use pnm::{read_pattern_image, write_pattern_image, ScaleSidecar};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// (N, C, H, W) with values in [0, 1].
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: impl Into<String>) -> Result<Self> {
        if images.ndim() != 4 || images.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("label {bad} ≥ class count {classes}")));
        }
        Ok(Self { images, labels, classes, split: split.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W) of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (self.images.gather_batch(indices), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Contiguous items `start..end`.
    pub fn range(&self, start: usize, end: usize) -> (Tensor, Vec<usize>) {
        (self.images.slice_batch(start, end), self.labels[start..end].to_vec())
    }

    /// The first `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let (images, labels) = self.range(0, n);
        LabeledDataset { images, labels, classes: self.classes, split: self.split.clone() }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
