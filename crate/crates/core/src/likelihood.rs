//! Observation models. Each variant supplies its exact log-density, inverse
//! link, and the Laplace dual pair (gradient and negative curvature of the
//! log-likelihood with respect to the latent function value).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Monte Carlo sample count for classification predictives.
pub const DEFAULT_MC_SAMPLES: usize = 64;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    Gaussian { noise_variance: f64 },
    Bernoulli,
    Categorical { num_classes: usize },
}

/// A single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

/// Laplace dual parameters for one observation, one entry per latent output.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Predictive for a single input.
#[derive(Debug, Clone, PartialEq)]
pub enum RowPredictive {
    /// Gaussian predictive over the (possibly standardized) target.
    Gaussian { mean: f64, var: f64 },
    /// Class probabilities; Bernoulli rows have two entries `[p(0), p(1)]`.
    Probs(Vec<f64>),
}

#[inline]
pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `log σ(f)` without overflow.
#[inline]
fn log_sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        -(-f).exp().ln_1p()
    } else {
        f - f.exp().ln_1p()
    }
}

pub fn softmax(f: &[f64]) -> Vec<f64> {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = f.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(f: &[f64], k: usize) -> f64 {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    f[k] - lse
}

impl Likelihood {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::Gaussian { noise_variance } if !(noise_variance.is_finite() && noise_variance > 0.0) => {
                Err(Error::InvalidConfig(format!(
                    "noise variance must be finite and positive, got {noise_variance}"
                )))
            }
            Likelihood::Categorical { num_classes } if num_classes < 2 => Err(Error::InvalidConfig(
                format!("categorical likelihood needs at least 2 classes, got {num_classes}"),
            )),
            _ => Ok(()),
        }
    }

    /// Number of latent outputs the network must produce.
    pub fn latent_dim(&self) -> usize {
        match *self {
            Likelihood::Categorical { num_classes } => num_classes,
            _ => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Likelihood::Gaussian { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Categorical { .. } => "categorical",
        }
    }

    fn check_latent(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} likelihood expects {} latent values, got {}",
                self.name(),
                self.latent_dim(),
                f.len()
            )));
        }
        Ok(())
    }

    fn binary_label(y: Target) -> Result<f64> {
        match y {
            Target::Class(0) => Ok(0.0),
            Target::Class(1) => Ok(1.0),
            Target::Real(v) if v == 0.0 || v == 1.0 => Ok(v),
            other => Err(Error::InvalidTarget(format!("bernoulli target {other:?}"))),
        }
    }

    fn class_label(y: Target, c: usize) -> Result<usize> {
        match y {
            Target::Class(k) if k < c => Ok(k),
            other => Err(Error::InvalidTarget(format!(
                "categorical target {other:?} with {c} classes"
            ))),
        }
    }

    fn real_label(y: Target) -> Result<f64> {
        match y {
            Target::Real(v) if v.is_finite() => Ok(v),
            other => Err(Error::InvalidTarget(format!("regression target {other:?}"))),
        }
    }

    /// Exact `log p(y | f)` including normalizing constants.
    pub fn log_density(&self, y: Target, f: &[f64]) -> Result<f64> {
        self.check_latent(f)?;
        Ok(match *self {
            Likelihood::Gaussian { noise_variance } => {
                let r = Self::real_label(y)? - f[0];
                -0.5 * (LN_2PI + noise_variance.ln()) - 0.5 * r * r / noise_variance
            }
            Likelihood::Bernoulli => {
                if Self::binary_label(y)? == 1.0 {
                    log_sigmoid(f[0])
                } else {
                    log_sigmoid(-f[0])
                }
            }
            Likelihood::Categorical { num_classes } => {
                log_softmax_at(f, Self::class_label(y, num_classes)?)
            }
        })
    }

    /// `α = ∇_f log p(y|f)` and `β = −diag ∇²_f log p(y|f)`, with β clamped at 0.
    pub fn dual_alpha_beta(&self, y: Target, f: &[f64]) -> Result<DualPair> {
        self.check_latent(f)?;
        let (alpha, beta) = match *self {
            Likelihood::Gaussian { noise_variance } => {
                let y = Self::real_label(y)?;
                (vec![(y - f[0]) / noise_variance], vec![1.0 / noise_variance])
            }
            Likelihood::Bernoulli => {
                let y = Self::binary_label(y)?;
                let s = sigmoid(f[0]);
                (vec![y - s], vec![s * (1.0 - s)])
            }
            Likelihood::Categorical { num_classes } => {
                let k = Self::class_label(y, num_classes)?;
                let p = softmax(f);
                let alpha = p
                    .iter()
                    .enumerate()
                    .map(|(c, &pc)| if c == k { 1.0 - pc } else { -pc })
                    .collect();
                let beta = p.iter().map(|&pc| pc * (1.0 - pc)).collect();
                (alpha, beta)
            }
        };
        let beta = beta.into_iter().map(|b: f64| b.max(0.0)).collect();
        Ok(DualPair { alpha, beta })
    }

    /// Class probabilities (or the identity for Gaussian) at a latent value.
    pub fn inverse_link(&self, f: &[f64]) -> Vec<f64> {
        match self {
            Likelihood::Gaussian { .. } => f.to_vec(),
            Likelihood::Bernoulli => {
                let p = sigmoid(f[0]);
                vec![1.0 - p, p]
            }
            Likelihood::Categorical { .. } => softmax(f),
        }
    }

    /// Predictive for one input given a factorized Gaussian over the latents.
    ///
    /// The Gaussian variant is analytic. Classification variants average the
    /// inverse link over `samples` draws from `rng`, except when every variance
    /// is zero, where the inverse link at the mean is returned exactly and no
    /// draws are consumed.
    pub fn expected_prob<R: Rng + ?Sized>(
        &self,
        f_mean: &[f64],
        f_var: &[f64],
        samples: usize,
        rng: &mut R,
    ) -> Result<RowPredictive> {
        self.check_latent(f_mean)?;
        self.check_latent(f_var)?;
        if f_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::NonFinite(format!("latent variance {f_var:?}")));
        }
        if let Likelihood::Gaussian { noise_variance } = *self {
            return Ok(RowPredictive::Gaussian {
                mean: f_mean[0],
                var: f_var[0] + noise_variance,
            });
        }
        if f_var.iter().all(|&v| v == 0.0) || samples == 0 {
            return Ok(RowPredictive::Probs(self.inverse_link(f_mean)));
        }
        let sd: Vec<f64> = f_var.iter().map(|v| v.sqrt()).collect();
        let width = if matches!(self, Likelihood::Bernoulli) { 2 } else { f_mean.len() };
        let mut acc = vec![0.0; width];
        let mut f = vec![0.0; f_mean.len()];
        for _ in 0..samples {
            for ((fi, m), s) in f.iter_mut().zip(f_mean).zip(&sd) {
                let e: f64 = rng.sample(StandardNormal);
                *fi = m + s * e;
            }
            for (a, p) in acc.iter_mut().zip(self.inverse_link(&f)) {
                *a += p;
            }
        }
        let n = samples as f64;
        Ok(RowPredictive::Probs(acc.into_iter().map(|a| a / n).collect()))
    }
}
