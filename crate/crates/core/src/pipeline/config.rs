use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::{FitConfig, ValidityConfig};
use crate::ccvae::VaeConfig;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTrainConfig};
use crate::metrics::{DEFAULT_NOVELTY_THRESHOLD, DEFAULT_UNIQUENESS_THRESHOLD};
use crate::nn::AdamWConfig;

/// Procedural dataset settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Comma-separated kind list, or `all` / `solids`.
    pub kinds: String,
    pub count: usize,
    pub wireframe: bool,
    /// Particle budget `N` per model.
    pub budget: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kinds: "solids".into(),
            count: 100,
            wireframe: false,
            budget: 64,
        }
    }
}

/// Optimization schedule shared by both trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Print a loss line every this many steps; zero disables logging.
    pub log_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            log_every: 50,
        }
    }
}

impl Schedule {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamWConfig::default()
        }
    }
}

/// Generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub count: usize,
    pub steps: usize,
    /// Particles per sample; zero means the training budget.
    pub particles: usize,
    /// Fixed clustering threshold; when absent `tau_scale` times the median
    /// nearest-neighbour latent distance of the training set is used.
    pub tau: Option<f64>,
    pub tau_scale: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 16,
            steps: 50,
            particles: 0,
            tau: None,
            tau_scale: 0.25,
        }
    }
}

/// Evaluation thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub novelty_threshold: f64,
    pub uniqueness_threshold: f64,
    /// Chamfer bound for a reconstruction to count as faithful.
    pub reconstruction_chamfer: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            novelty_threshold: DEFAULT_NOVELTY_THRESHOLD,
            uniqueness_threshold: DEFAULT_UNIQUENESS_THRESHOLD,
            reconstruction_chamfer: 2e-2,
        }
    }
}

/// Every tunable of a run; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; zero uses all logical cores.
    pub threads: usize,
    pub data: DataConfig,
    pub vae: VaeConfig,
    pub vae_train: Schedule,
    pub flow: FlowConfig,
    pub flow_train: Schedule,
    pub flow_schedule: FlowTrainConfig,
    pub sample: SampleConfig,
    pub fit: FitConfig,
    pub validity: ValidityConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            data: DataConfig::default(),
            vae: VaeConfig::default(),
            vae_train: Schedule::default(),
            flow: FlowConfig::default(),
            flow_train: Schedule {
                steps: 5000,
                batch_size: 32,
                lr: 3e-4,
                ..Schedule::default()
            },
            flow_schedule: FlowTrainConfig::default(),
            sample: SampleConfig::default(),
            fit: FitConfig::default(),
            validity: ValidityConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the effective configuration as `config.toml` inside `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.flow.validate()?;
        if self.flow.latent_dim != self.vae.latent_dim {
            return Err(Error::Config(format!(
                "flow.latent_dim {} differs from vae.latent_dim {}",
                self.flow.latent_dim, self.vae.latent_dim
            )));
        }
        if self.data.budget == 0 {
            return Err(Error::Config("data.budget must be positive".into()));
        }
        for (name, s) in [("vae_train", &self.vae_train), ("flow_train", &self.flow_train)] {
            if s.batch_size == 0 || !(s.lr > 0.0) {
                return Err(Error::Config(format!("{name} needs a positive batch_size and lr")));
            }
        }
        if self.sample.steps == 0 {
            return Err(Error::Config("sample.steps must be positive".into()));
        }
        if self.sample.tau.is_some_and(|t| !(t > 0.0)) || !(self.sample.tau_scale > 0.0) {
            return Err(Error::Config("cluster thresholds must be positive".into()));
        }
        Ok(())
    }
}
