//! Run configuration (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/ml1m"
//!
//! [data]
//! path = "ratings.dat"
//! format = "movielens"
//!
//! [split]
//! row_holdout = 0.1
//! col_holdout = 0.1
//!
//! [train]
//! mode = "dmf-d"
//! ```
//!
//! Every section except `[data]` is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use dmf_core::{Activation, BranchConfig, Mode, Scaling, SplitFractions, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::DataFormat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dmf-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub format: DataFormat,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "five")]
    pub beta: f64,
    /// Gap between neighbouring ratings.
    #[serde(default = "one")]
    pub level_step: f64,
}

fn one() -> f64 {
    1.0
}

fn five() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    /// Share of rows held out of training entirely (areas II and IV).
    pub row_holdout: Option<f64>,
    /// Share of columns held out of training entirely (areas III and IV).
    pub col_holdout: Option<f64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let f = SplitFractions::default();
        SplitSection { train: f.train, validation: f.validation, test: f.test, row_holdout: None, col_holdout: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: vec![512, 128], latent_dim: 64, activation: "selu".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeName {
    #[serde(rename = "dmf")]
    Dmf,
    #[serde(rename = "dmf-d")]
    DmfD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: ModeName,
    pub gamma: f64,
    pub gamma2: f64,
    pub learning_rate: f64,
    pub boundary_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub residual_quantization: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            mode: ModeName::Dmf,
            gamma: t.gamma,
            gamma2: t.gamma2,
            learning_rate: t.learning_rate,
            boundary_learning_rate: t.boundary_learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lambda_start: t.lambda_start,
            lambda_end: t.lambda_end,
            residual_quantization: t.residual_quantization,
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text, path)?;
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::config(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), dmf_core::Error> {
        self.scaling()?;
        self.fractions()?;
        for (name, f) in [("row_holdout", self.split.row_holdout), ("col_holdout", self.split.col_holdout)] {
            if let Some(f) = f {
                if !(0.0..1.0).contains(&f) {
                    return Err(dmf_core::Error::Config(format!("{} must lie in [0, 1), got {}", name, f)));
                }
            }
        }
        self.scaling()?.level_values(self.data.level_step)?;
        Activation::from_name(&self.model.activation)?;
        BranchConfig::new(1, self.model.hidden.clone(), self.model.latent_dim, Activation::Selu).validate()?;
        self.train_config().validate()
    }

    pub fn scaling(&self) -> std::result::Result<Scaling, dmf_core::Error> {
        Scaling::new(self.data.alpha, self.data.beta)
    }

    pub fn fractions(&self) -> std::result::Result<SplitFractions, dmf_core::Error> {
        SplitFractions::new(self.split.train, self.split.validation, self.split.test)
    }

    pub fn holdout(&self) -> Option<(f64, f64)> {
        match (self.split.row_holdout, self.split.col_holdout) {
            (None, None) => None,
            (r, c) => Some((r.unwrap_or(0.0), c.unwrap_or(0.0))),
        }
    }

    pub fn mode(&self) -> Mode {
        match self.train.mode {
            ModeName::Dmf => Mode::Dmf,
            ModeName::DmfD => Mode::DmfD,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            mode: self.mode(),
            gamma: t.gamma,
            gamma2: t.gamma2,
            learning_rate: t.learning_rate,
            boundary_learning_rate: t.boundary_learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: dmf_core::rng::sub_seed(self.seed, "shuffle"),
            lambda_start: t.lambda_start,
            lambda_end: t.lambda_end,
            residual_quantization: t.residual_quantization,
            level_step: self.data.level_step,
        }
    }

    /// Branch layouts for inputs of the given lengths.
    pub fn branches(&self, row_input: usize, col_input: usize) -> Result<(BranchConfig, BranchConfig)> {
        let act = Activation::from_name(&self.model.activation)?;
        Ok((
            BranchConfig::new(row_input, self.model.hidden.clone(), self.model.latent_dim, act),
            BranchConfig::new(col_input, self.model.hidden.clone(), self.model.latent_dim, act),
        ))
    }
}
