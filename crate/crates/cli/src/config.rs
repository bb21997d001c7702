//! JSON run configuration. Every key is optional; command-line flags
//! override the file.

use std::path::{Path, PathBuf};

use cxrnet::data::{SplitUnit, SyntheticSpec, UncertainPolicy, ViewFilter, DEFAULT_SPLIT_RATIOS};
use cxrnet::evaluation::F1Objective;
use cxrnet::network::{preset_config, DenseNetConfig};
use cxrnet::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pathology: String,
    /// Seeds network initialization, shuffling, splitting and synthesis.
    pub seed: u64,
    pub preset: String,
    /// Explicit topology; replaces `preset` when present.
    pub network: Option<DenseNetConfig>,
    pub train: TrainConfig,
    /// Inverse-frequency class weights when true, unit weights otherwise.
    pub weighted_loss: bool,
    pub uncertain: UncertainPolicy,
    pub view_filter: ViewFilter,
    pub split_unit: SplitUnit,
    pub split_ratios: [f64; 3],
    pub manifest: Option<PathBuf>,
    /// Directory that manifest paths are relative to; defaults to the
    /// manifest's own directory.
    pub image_root: Option<PathBuf>,
    pub cohort: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Fixed decision threshold; chosen on the validation split when absent.
    pub threshold: Option<f64>,
    pub objective: F1Objective,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pathology: "Lung Lesion".into(),
            seed: 0,
            preset: "tiny".into(),
            network: None,
            train: TrainConfig::default(),
            weighted_loss: true,
            uncertain: UncertainPolicy::default(),
            view_filter: ViewFilter::default(),
            split_unit: SplitUnit::default(),
            split_ratios: DEFAULT_SPLIT_RATIOS,
            manifest: None,
            image_root: None,
            cohort: None,
            checkpoint: None,
            out: None,
            threshold: None,
            objective: F1Objective::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn network_config(&self) -> Result<DenseNetConfig, CliError> {
        let cfg = match &self.network {
            Some(n) => n.clone(),
            None => preset_config(&self.preset).map_err(|e| CliError::Usage(e.to_string()))?,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Copies the top-level seed into the sections that carry their own.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.synthetic.seed = self.seed;
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
