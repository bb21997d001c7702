//! ROC analysis, AUC, F1-maximizing threshold selection and report export.

mod metrics;
mod report;

use thiserror::Error;

pub use metrics::{
    auc, roc_curve, select_threshold, threshold_candidates, Confusion, F1Objective, RocPoint, ScoredSet,
};
pub use report::{evaluate, reference_auc, roc_svg, write_roc_csv, EvalOutcome, EvalReport, REFERENCE_AUCS};

use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scored set is empty")]
    Empty,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {0} outside [0,1]")]
    ScoreRange(f64),
    #[error("ROC is undefined: the set contains a single class")]
    SingleClass,
    #[error("invalid ROC curve: {0}")]
    Curve(String),
    #[error("threshold {0} outside [0,1]")]
    Threshold(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
