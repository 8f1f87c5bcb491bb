//! Run configurations, named profiles and append-only run directories, plus
//! the command implementations the `rgame` binary dispatches to.

mod commands;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{ArchConfig, TrainConfig, TrainError};
use crate::forge::{GeneralizationConfig, IoError, ForgeError};
use crate::game::{ChannelConfig, GameError};
use crate::grad::CheckpointError;
use crate::metrics::MetricError;
use crate::rules::{AttributeDomain, RuleSet, Value};

pub use commands::*;

/// Profiles accepted by [`RunConfig::profile`].
pub const PROFILES: [&str; 4] = ["desk-tiny", "desk-small", "full", "generalization"];

/// Written next to every run's `config.json`.
pub const VERSION_FILE: &str = "version.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad flags, unknown profile or an unusable config.
    #[error("usage: {0}")]
    Usage(String),
    /// The inputs were readable but failed a check.
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] IoError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Game(#[from] GameError),
}

impl HarnessError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    /// Attribute cardinality N.
    pub values: Value,
    pub num_attributes: usize,
    /// Number of leading joint rules in play.
    pub rules: usize,
    /// Main dataset size per rule combination, half train and half test;
    /// zero skips the main dataset.
    pub problems_per_combo: usize,
    pub generalization: Option<GeneralizationConfig>,
    pub pretrain_problems: usize,
    pub pretrain_candidates: usize,
    /// Split both training stages draw joint problems from.
    pub train_split: String,
}

impl DataConfig {
    pub fn domain(&self) -> Result<AttributeDomain, HarnessError> {
        AttributeDomain::new(self.values).map_err(|e| HarnessError::Usage(e.to_string()))
    }

    pub fn rule_set(&self) -> RuleSet {
        let joint = RuleSet::joint();
        if self.rules >= joint.len() {
            joint
        } else {
            joint.truncated(self.rules)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub topsim_samples: usize,
    pub topsim_runs: usize,
    /// Target attribute cardinalities for language transfer.
    pub etl_targets: Vec<Value>,
    /// Listener training for transfer and the message-blocked audit.
    pub listener: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub data: DataConfig,
    pub channel: ChannelConfig,
    pub arch: ArchConfig,
    pub pretrain: TrainConfig,
    pub joint: TrainConfig,
    pub metrics: MetricsConfig,
}

fn train_config(epochs: usize, batch_size: usize, eval_limit: Option<usize>) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        eval_limit,
        ..TrainConfig::default()
    }
}

impl RunConfig {
    pub fn profile(name: &str) -> Result<Self, HarnessError> {
        let cfg = match name {
            "desk-tiny" => Self {
                profile: name.into(),
                seed: 1,
                data: DataConfig {
                    seed: 7,
                    values: 10,
                    num_attributes: 2,
                    rules: 4,
                    problems_per_combo: 512,
                    generalization: None,
                    pretrain_problems: 2000,
                    pretrain_candidates: 2,
                    train_split: "train".into(),
                },
                channel: ChannelConfig::new(2, 8),
                arch: ArchConfig::desk(2),
                pretrain: train_config(150, 64, Some(1024)),
                joint: train_config(40, 64, Some(1024)),
                metrics: MetricsConfig {
                    topsim_samples: 1000,
                    topsim_runs: 20,
                    etl_targets: vec![10, 20],
                    listener: train_config(30, 64, Some(1024)),
                },
            },
            "desk-small" => Self {
                profile: name.into(),
                seed: 1,
                data: DataConfig {
                    seed: 7,
                    values: 20,
                    num_attributes: 4,
                    rules: 8,
                    problems_per_combo: 4,
                    generalization: None,
                    pretrain_problems: 2000,
                    pretrain_candidates: 8,
                    train_split: "train".into(),
                },
                channel: ChannelConfig::standard(),
                arch: ArchConfig::desk(4),
                pretrain: train_config(100, 128, Some(1024)),
                joint: train_config(30, 128, Some(1024)),
                metrics: MetricsConfig {
                    topsim_samples: 1000,
                    topsim_runs: 20,
                    etl_targets: vec![20, 30],
                    listener: train_config(20, 128, Some(1024)),
                },
            },
            "full" | "generalization" => Self {
                profile: name.into(),
                seed: 1,
                data: DataConfig {
                    seed: 7,
                    values: 40,
                    num_attributes: 4,
                    rules: 8,
                    problems_per_combo: 20,
                    generalization: (name == "generalization").then(GeneralizationConfig::standard),
                    pretrain_problems: 2000,
                    pretrain_candidates: 8,
                    train_split: if name == "generalization" { "gen_train" } else { "train" }.into(),
                },
                channel: ChannelConfig::standard(),
                arch: ArchConfig::full(4, 40),
                pretrain: train_config(100, 512, Some(4096)),
                joint: train_config(100, 512, Some(4096)),
                metrics: MetricsConfig {
                    topsim_samples: 1000,
                    topsim_runs: 20,
                    etl_targets: vec![20, 30, 40, 80],
                    listener: train_config(20, 512, Some(4096)),
                },
            },
            other => {
                return Err(HarnessError::Usage(format!(
                    "unknown profile `{other}` (expected one of {})",
                    PROFILES.join(", ")
                )))
            }
        };
        Ok(cfg.with_seed(1))
    }

    /// Sets the training seed everywhere it is consumed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.joint.seed = seed;
        self.metrics.listener.seed = seed;
        self
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        self.data.domain()?;
        if self.data.num_attributes != self.arch.num_attributes {
            return usage(format!(
                "data has {} attributes but the model expects {}",
                self.data.num_attributes, self.arch.num_attributes
            ));
        }
        if self.data.rules == 0 {
            return usage("at least one rule is required".into());
        }
        let combos = self.data.rule_set().len().pow(self.data.num_attributes as u32) as u128;
        if self.channel.capacity() < combos {
            return usage(format!(
                "channel capacity {} cannot name {combos} rule combinations",
                self.channel.capacity()
            ));
        }
        self.arch.validate()?;
        Ok(())
    }

    /// Speaker, stage-2 message module and listener initialization seeds.
    pub fn agent_seeds(&self) -> (u64, u64, u64) {
        (self.seed, self.seed + 50, self.seed + 100)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionStamp {
    pub package: String,
    pub version: String,
    pub command: String,
}

/// A fresh `<out>/<command>-NNN` directory. Existing runs are never reused.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, command: &str, cfg: &RunConfig) -> Result<Self, HarnessError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        for n in 1..100_000 {
            let path = out.join(format!("{command}-{n:03}"));
            match fs::create_dir(&path) {
                Ok(()) => {
                    let dir = Self { path };
                    cfg.save(&dir.file(CONFIG_FILE))?;
                    let stamp = VersionStamp {
                        package: env!("CARGO_PKG_NAME").into(),
                        version: env!("CARGO_PKG_VERSION").into(),
                        command: command.into(),
                    };
                    dir.write_json(VERSION_FILE, &stamp)?;
                    return Ok(dir);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Err(HarnessError::Usage(format!("{}: run directory limit reached", out.display())))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, HarnessError> {
        let path = self.file(name);
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, HarnessError> {
        let path = self.file(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests;
