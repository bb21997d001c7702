//! Dense-connectivity CNN classifier for binary chest X-ray findings.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: shaped arrays, the forward kernels and reverse-mode gradients.
//! * [`network`]: the DenseNet topology, its parameters and checkpoint files.
//! * [`training`]: class weights, the weighted loss, Adam and the epoch loop.
//! * [`data`]: CheXpert-style manifests, cohorts, splits, image loading and
//!   a synthetic stand-in dataset.
//! * [`evaluation`]: ROC, AUC, threshold selection and reports.

pub mod data;
pub mod evaluation;
pub mod network;
pub mod tensor;
pub mod training;

pub use tensor::{Real, Tensor, TensorError};
