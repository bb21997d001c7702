use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::tensor::ops::PROB_CLAMP;

/// Inverse-frequency class weights: `w = (N_p + N_n) / N_class`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_p: f64,
    pub w_n: f64,
    pub n_p: usize,
    pub n_n: usize,
}

pub fn class_weights(n_p: usize, n_n: usize) -> Result<ClassWeights> {
    if n_p == 0 || n_n == 0 {
        return Err(TrainError::DegenerateCohort { n_p, n_n });
    }
    let total = (n_p + n_n) as f64;
    Ok(ClassWeights { w_p: total / n_p as f64, w_n: total / n_n as f64, n_p, n_n })
}

impl ClassWeights {
    /// Weights of 1 for both classes; counts are kept for reporting.
    pub fn unit(n_p: usize, n_n: usize) -> Self {
        ClassWeights { w_p: 1.0, w_n: 1.0, n_p, n_n }
    }

    /// Weights in network output order `(positive, negative)`.
    pub fn per_class(&self) -> [f64; 2] {
        [self.w_p, self.w_n]
    }
}

/// `−Σ wᵢ·qᵢ·ln(pᵢ)` for a single example, probabilities clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn weighted_cross_entropy(probs: &[f64], onehot: &[f64], weights: &[f64]) -> Result<f64> {
    let ones = onehot.iter().filter(|&&q| q == 1.0).count();
    let zeros = onehot.iter().filter(|&&q| q == 0.0).count();
    if ones != 1 || ones + zeros != onehot.len() || onehot.len() != probs.len() || weights.len() != probs.len() {
        return Err(TrainError::MalformedOneHot(onehot.to_vec()));
    }
    let t = onehot.iter().position(|&q| q == 1.0).expect("one entry is 1");
    Ok(-weights[t] * probs[t].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
}
