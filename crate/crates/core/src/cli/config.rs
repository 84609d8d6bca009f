use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::SplitRatio;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthetic::SynthConfig;
use crate::training::TrainConfig;

/// Everything a command needs, as read from a TOML file and then overridden
/// by command-line flags.
///
/// `seed` is the single source of randomness: it is copied into
/// `train.seed`, `augment.seed` and `synth.seed` on resolution, and every
/// consumer derives its own stream from it by hashing a purpose string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Defaults to 7:1:2 for speed datasets and 6:2:2 for flow.
    pub split_ratio: Option<SplitRatio>,
    /// Which split `evaluate` scores.
    pub eval_split: EvalSplit,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            dataset: None,
            checkpoint: None,
            split_ratio: None,
            eval_split: EvalSplit::Test,
            out: None,
            seed: 0,
            threads: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Propagates the master seed and checks every section.
    pub fn finish(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.augment.seed = self.seed;
        self.synth.seed = self.seed;
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (use --data or `dataset` in the config file)".into()))?;
        if !p.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        let p = self
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no checkpoint given (use --checkpoint)".into()))?;
        if !p.is_file() {
            return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given (use --out)".into()))
    }

    /// Writes `config.toml` into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
