//! Versioned JSON documents for weights, posteriors and continual-learning
//! memories. Doubles are written in shortest round-trip form, so a save/load
//! cycle reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cl::{MemoryBuffer, TaskMemory};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::likelihood::Likelihood;
use crate::linalg::Matrix;
use crate::nn::{LayerLayout, NetworkSpec, Weights};
use crate::sparse::{DualParams, InducingSet, MeanMode, SparsePosterior, WhitenedDuals};

pub const WEIGHTS_VERSION: u32 = 1;
pub const POSTERIOR_VERSION: u32 = 1;
pub const BUFFER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsCheckpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub layout: Vec<LayerLayout>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<Likelihood>,
    /// Input/target scaling the network was trained under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Normalization>,
    /// Class labels in class-index order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

impl WeightsCheckpoint {
    pub fn new(w: &Weights) -> Self {
        Self {
            version: WEIGHTS_VERSION,
            spec: w.spec().clone(),
            layout: w.layout().to_vec(),
            values: w.values().to_vec(),
            prior_precision: None,
            likelihood: None,
            preprocessing: None,
            classes: None,
        }
    }

    pub fn weights(&self) -> Result<Weights> {
        check_version(self.version, WEIGHTS_VERSION)?;
        if self.layout != self.spec.layout() {
            return Err(Error::InvalidConfig("checkpoint layout does not match its spec".into()));
        }
        Weights::from_values(self.spec.clone(), self.values.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorCheckpoint {
    pub version: u32,
    pub method: String,
    #[serde(rename = "Z")]
    pub z: Matrix,
    #[serde(default)]
    pub source_indices: Option<Vec<usize>>,
    pub seed: u64,
    pub alpha_u: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Matrix>,
    /// Dual sums in the inducing-point whitened basis. Optional on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitened: Option<WhitenedDuals>,
    pub delta: f64,
    pub likelihood: Likelihood,
    pub mean_mode: MeanMode,
    /// Path of the weights checkpoint, relative to this file when not absolute.
    pub weights_ref: String,
    pub batch: usize,
}

impl PosteriorCheckpoint {
    pub fn new(post: &SparsePosterior, method: &str, weights_ref: &str) -> Self {
        let inducing = post.inducing();
        let duals = post.duals();
        Self {
            version: POSTERIOR_VERSION,
            method: method.to_string(),
            z: inducing.z.clone(),
            source_indices: inducing.source_indices.clone(),
            seed: inducing.seed,
            alpha_u: duals.alpha_u.clone(),
            b_u: duals.b_u.clone(),
            whitened: Some(post.whitened_duals().clone()),
            delta: post.prior_precision(),
            likelihood: *post.likelihood(),
            mean_mode: post.mean_mode(),
            weights_ref: weights_ref.to_string(),
            batch: post.batch(),
        }
    }

    /// Rebuilds the posterior around already-loaded weights.
    pub fn posterior(&self, weights: Arc<Weights>) -> Result<SparsePosterior> {
        check_version(self.version, POSTERIOR_VERSION)?;
        let inducing = InducingSet {
            z: self.z.clone(),
            source_indices: self.source_indices.clone(),
            seed: self.seed,
        };
        let duals = DualParams {
            alpha_u: self.alpha_u.clone(),
            b_u: self.b_u.clone(),
        };
        SparsePosterior::from_parts(
            inducing,
            duals,
            self.whitened.clone(),
            weights,
            self.likelihood,
            self.delta,
            self.mean_mode,
            self.batch,
        )
    }

    pub fn weights_path(&self, posterior_path: &Path) -> PathBuf {
        let r = Path::new(&self.weights_ref);
        if r.is_absolute() {
            r.to_path_buf()
        } else {
            posterior_path.parent().unwrap_or(Path::new("")).join(r)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferCheckpoint {
    pub version: u32,
    pub observed_classes: Vec<usize>,
    pub tasks: Vec<TaskMemory>,
}

impl BufferCheckpoint {
    pub fn new(buffer: &MemoryBuffer) -> Self {
        Self {
            version: BUFFER_VERSION,
            observed_classes: buffer.observed_classes.iter().copied().collect(),
            tasks: buffer.tasks.clone(),
        }
    }

    pub fn buffer(&self) -> Result<MemoryBuffer> {
        check_version(self.version, BUFFER_VERSION)?;
        Ok(MemoryBuffer {
            tasks: self.tasks.clone(),
            observed_classes: self.observed_classes.iter().copied().collect(),
        })
    }
}

fn check_version(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Version { found, expected });
    }
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_weights(path: impl AsRef<Path>, w: &Weights) -> Result<()> {
    save_json(path, &WeightsCheckpoint::new(w))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Weights> {
    load_json::<WeightsCheckpoint>(path)?.weights()
}

/// Loads a posterior together with the weights it references.
pub fn load_posterior(path: impl AsRef<Path>) -> Result<(PosteriorCheckpoint, WeightsCheckpoint, SparsePosterior)> {
    let path = path.as_ref();
    let ckpt: PosteriorCheckpoint = load_json(path)?;
    let wck: WeightsCheckpoint = load_json(ckpt.weights_path(path))?;
    let post = ckpt.posterior(Arc::new(wck.weights()?))?;
    Ok((ckpt, wck, post))
}
