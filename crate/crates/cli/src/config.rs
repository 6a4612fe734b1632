use std::path::Path;

use dualsparse::checkpoint::load_json;
use dualsparse::likelihood::Likelihood;
use dualsparse::nn::Activation;
use dualsparse::registry::PosteriorRegistry;
use dualsparse::sparse::{MeanMode, DEFAULT_BATCH};
use dualsparse::train::TrainConfig;
use dualsparse::{Error, Result};
use serde::Deserialize;

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub likelihood: Likelihood,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub posterior: PosteriorConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub cl: Option<ClSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub target: String,
    /// Train / validation / test fractions.
    pub fractions: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            target: "y".into(),
            fractions: [0.7, 0.15, 0.15],
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50],
            activation: Activation::Tanh,
            bias: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub method: String,
    pub num_inducing: usize,
    pub seed: u64,
    pub batch: usize,
    pub mean_mode: MeanMode,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            method: "sparse".into(),
            num_inducing: 64,
            seed: 0,
            batch: DEFAULT_BATCH,
            mean_mode: MeanMode::ZeroMean,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Monte Carlo draws for classification probabilities.
    pub samples: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { samples: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClSection {
    pub tau: f64,
    pub points_per_task: usize,
    pub classes_per_task: usize,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_metric() -> String {
    "dual".into()
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        let f = self.data.fractions;
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
            return Err(Error::BadFractions(f));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        PosteriorRegistry::default().get(&self.posterior.method)?;
        if self.posterior.num_inducing == 0 || self.posterior.batch == 0 {
            return Err(Error::InvalidConfig("num_inducing and batch must be at least 1".into()));
        }
        if self.likelihood.is_classification() && self.predict.samples == 0 {
            return Err(Error::InvalidConfig("predict.samples must be at least 1".into()));
        }
        if let Some(cl) = &self.cl {
            if cl.classes_per_task == 0 {
                return Err(Error::InvalidConfig("cl.classes_per_task must be at least 1".into()));
            }
            self.cl_config(cl).validate()?;
        }
        Ok(())
    }

    pub fn cl_config(&self, cl: &ClSection) -> dualsparse::cl::ClConfig {
        dualsparse::cl::ClConfig {
            tau: cl.tau,
            points_per_task: cl.points_per_task,
            train: self.train.clone(),
            metric: cl.metric.clone(),
            batch: cl.batch,
        }
    }

    /// `--seed` replaces the training, inducing-point and prediction seeds.
    /// The data split keeps `data.split_seed`.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
            self.posterior.seed = s;
            self.predict.seed = s;
        }
    }
}
