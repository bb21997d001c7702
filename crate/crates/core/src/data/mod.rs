//! Manifest ingestion, cohort extraction and splitting, image loading, and a
//! synthetic dataset generator.

pub mod cohort;
pub mod image;
pub mod manifest;
pub mod synthetic;

use thiserror::Error;

pub use cohort::{
    extract_cohort, reference_cohort, split, split_sizes, ClassCounts, Cohort, CohortRecord, LabeledRecord,
    ReferenceCohort, Split, SplitUnit, UncertainPolicy, ViewFilter, DEFAULT_SPLIT_RATIOS, REFERENCE_COHORTS,
};
pub use image::load_image;
pub use manifest::{parse_manifest, patient_id, write_manifest, Label, Manifest, ManifestRecord, Projection, View};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing mandatory column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: invalid value {value:?} in column {column:?}")]
    BadValue { row: usize, column: String, value: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown pathology {0:?}")]
    UnknownPathology(String),
    #[error("cohort for {0:?} is empty after filtering")]
    EmptyCohort(String),
    #[error("{units} split units cannot fill {splits} splits")]
    TooFewUnits { units: usize, splits: usize },
    #[error("split ratios {0:?} must be positive and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("{path}: {detail}")]
    Image { path: String, detail: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}
