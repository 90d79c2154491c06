//! Run configuration file (TOML). Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use dme_core::client::ClientConfig;
use dme_core::planner::{AblationMode, LossWeights, LrSchedule, PlannerDims, TrainConfig};
use dme_core::sim::GridSpec;
use dme_core::RuleThresholds;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the resolved config written into every run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    pub scenes: usize,
    pub eval_scenes: usize,
    pub agents: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: PathBuf::from("data/desk"),
            scenes: 320,
            eval_scenes: 64,
            agents: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            batch_size: t.batch_size,
            grad_clip: t.grad_clip,
            lr_schedule: t.lr_schedule,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientsSection {
    pub decision_maker: Option<ClientConfig>,
    pub judge: Option<ClientConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub ablation: AblationMode,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub grid: GridSpec,
    pub planner: PlannerDims,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub thresholds: RuleThresholds,
    pub clients: ClientsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            ablation: AblationMode::DmTextCl,
            out_dir: PathBuf::from("runs/desk"),
            data: DataSection::default(),
            grid: GridSpec::default(),
            planner: PlannerDims::default(),
            train: TrainSection::default(),
            loss: LossWeights::default(),
            thresholds: RuleThresholds::default(),
            clients: ClientsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.train_config().validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Loads a config file. Relative data and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|message| CliError::Config {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.dir.is_relative() {
            cfg.data.dir = base.join(&cfg.data.dir);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Writes the resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            seed: self.seed,
            ablation: self.ablation,
            weights: self.loss,
            thresholds: self.thresholds,
            dims: self.planner,
            grad_clip: self.train.grad_clip,
            lr_schedule: self.train.lr_schedule,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(
            RunConfig::from_toml("[train]\nepochs = 3\nlr = 0.1\nmomentum = 0.0\nbatch_size = 4\nwarmup = 2").is_err()
        );
        assert!(
            RunConfig::from_toml("[loss]\nimitation = 1.0\ncollision = 0.5\nconsistency = 0.2\nextra = 1").is_err()
        );
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[train]\nepochs = 3\nlr = -1.0\nmomentum = 0.0\nbatch_size = 4").is_err());
    }
}
