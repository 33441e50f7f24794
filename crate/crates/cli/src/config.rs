use std::path::{Path, PathBuf};

use dagperm::synth::SynthSpec;
use dagperm::vi::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_POSTERIOR_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub posterior_samples: usize,
    pub bins: usize,
    /// Marginal probability above which an edge enters the consensus graph.
    pub consensus_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            posterior_samples: DEFAULT_POSTERIOR_SAMPLES,
            bins: dagperm::eval::DEFAULT_BINS,
            consensus_threshold: 0.5,
        }
    }
}

/// A complete run description. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.data, &mut config.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
