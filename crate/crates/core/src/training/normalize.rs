use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

const DEGENERATE_STD: f64 = 1e-12;

/// Which statistics standardize an input image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    #[default]
    PerImage,
    /// Mean and std pooled over every training-split pixel.
    Dataset,
}

/// A resolved normalization, ready to apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Normalization {
    PerImage,
    Dataset { mean: f64, std: f64 },
}

impl Normalization {
    /// Checkpoint header key under which [`to_header`](Self::to_header) is stored.
    pub const HEADER_KEY: &'static str = "normalization";

    /// `per_image`, or `dataset:<mean>:<std>` with round-trip float text.
    pub fn to_header(&self) -> String {
        match self {
            Normalization::PerImage => "per_image".into(),
            Normalization::Dataset { mean, std } => format!("dataset:{mean:?}:{std:?}"),
        }
    }

    pub fn from_header(s: &str) -> Option<Self> {
        match s.split(':').collect::<Vec<_>>().as_slice() {
            ["per_image"] => Some(Normalization::PerImage),
            ["dataset", m, d] => Some(Normalization::Dataset { mean: m.parse().ok()?, std: d.parse().ok()? }),
            _ => None,
        }
    }

    pub fn apply(&self, image: &Tensor<f32>) -> Tensor<f32> {
        match *self {
            Normalization::PerImage => normalize_image(image),
            Normalization::Dataset { mean, std } => standardize(image, mean, std),
        }
    }
}

/// Population mean and standard deviation over all elements.
pub(crate) fn moments(values: impl Iterator<Item = f32>) -> (f64, f64, usize) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        let v = v as f64;
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt(), n)
}

/// Shifts and scales one image to zero mean and unit (population) standard
/// deviation over all its elements. A constant image maps to zeros.
pub fn normalize_image(image: &Tensor<f32>) -> Tensor<f32> {
    let n = image.len() as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    standardize(image, mean, var.sqrt())
}

fn standardize(image: &Tensor<f32>, mean: f64, std: f64) -> Tensor<f32> {
    if std < DEGENERATE_STD {
        return image.zeros_like();
    }
    image.map(|v| ((v as f64 - mean) / std) as f32)
}
