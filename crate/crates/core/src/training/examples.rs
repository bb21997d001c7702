use std::path::PathBuf;

use super::normalize::Normalization;
use super::Result;
use crate::data::{load_image, Cohort, Split};
use crate::tensor::Tensor;

/// Output column of the positive class.
pub const CLASS_POSITIVE: usize = 0;
pub const CLASS_NEGATIVE: usize = 1;

/// Indexed, labelled single-channel images of a fixed side.
pub trait Examples {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn positive(&self, index: usize) -> bool;

    /// The raw `1×S×S` image with values in `[0,1]`.
    fn image(&self, index: usize) -> Result<Tensor<f32>>;

    fn counts(&self) -> (usize, usize) {
        let p = (0..self.len()).filter(|&i| self.positive(i)).count();
        (p, self.len() - p)
    }
}

#[derive(Clone, Debug, Default)]
pub struct InMemory {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<bool>,
}

impl Examples for InMemory {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn positive(&self, index: usize) -> bool {
        self.labels[index]
    }

    fn image(&self, index: usize) -> Result<Tensor<f32>> {
        Ok(self.images[index].clone())
    }
}

/// Images decoded from disk on every access.
#[derive(Clone, Debug)]
pub struct OnDisk {
    pub paths: Vec<PathBuf>,
    pub labels: Vec<bool>,
    pub side: usize,
}

impl OnDisk {
    /// The records of one cohort split, in cohort order.
    pub fn from_cohort(cohort: &Cohort, split: Split, side: usize) -> Self {
        let (paths, labels) = cohort.records_in(split).map(|r| (PathBuf::from(&r.path), r.positive)).unzip();
        OnDisk { paths, labels, side }
    }

    /// Decodes everything once.
    pub fn preload(&self) -> Result<InMemory> {
        let images = (0..self.len()).map(|i| self.image(i)).collect::<Result<_>>()?;
        Ok(InMemory { images, labels: self.labels.clone() })
    }
}

impl Examples for OnDisk {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn positive(&self, index: usize) -> bool {
        self.labels[index]
    }

    fn image(&self, index: usize) -> Result<Tensor<f32>> {
        Ok(load_image(&self.paths[index], self.side)?)
    }
}

/// Normalizes each image, replicates it to `channels` planes, and stacks the
/// batch as `N×channels×S×S`. Targets use the network's class order.
pub fn assemble_batch(
    examples: &dyn Examples,
    indices: &[usize],
    normalization: &Normalization,
    channels: usize,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut data = Vec::new();
    let mut targets = Vec::with_capacity(indices.len());
    let mut side = None;
    for &i in indices {
        let img = normalization.apply(&examples.image(i)?);
        let s = img.shape()[img.rank() - 1];
        if *side.get_or_insert(s) != s || img.len() != s * s {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "assemble_batch",
                detail: format!("example {i} has shape {:?}", img.shape()),
            }
            .into());
        }
        for _ in 0..channels {
            data.extend_from_slice(img.data());
        }
        targets.push(if examples.positive(i) { CLASS_POSITIVE } else { CLASS_NEGATIVE });
    }
    let s = side.unwrap_or(1);
    Ok((Tensor::new([indices.len(), channels, s, s], data)?, targets))
}
