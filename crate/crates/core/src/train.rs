//! MAP training: minimizes `Σᵢ −log p(yᵢ | f_w(xᵢ)) + (δ/2)‖w‖²` (plus an
//! optional extra penalty) with Adam, keeping the checkpoint with the lowest
//! validation loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::likelihood::{Likelihood, RowPredictive};
use crate::linalg::Matrix;
use crate::nn::{backprop_into, forward, forward_cached, init_weights, NetworkSpec, Weights};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation evaluations (one per epoch) without improvement before stopping.
    pub patience: usize,
    /// Weight-decay strength δ; also the prior precision of the kernel.
    pub prior_precision: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 500,
            patience: 50,
            prior_precision: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.prior_precision.is_finite() && self.prior_precision > 0.0) {
            return Err(Error::InvalidConfig("prior_precision must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let steps_per_epoch = n_train.div_ceil(self.batch_size).max(1);
        if self.patience > self.max_epochs.saturating_mul(steps_per_epoch) {
            return Err(Error::InvalidConfig(format!(
                "patience {} exceeds max_epochs × steps_per_epoch = {}",
                self.patience,
                self.max_epochs * steps_per_epoch
            )));
        }
        Ok(())
    }
}

/// Additional differentiable term added to the training objective.
pub trait Penalty {
    /// Returns the penalty at `w` and adds its gradient into `grad`.
    fn value_and_grad(&self, w: &Weights, grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose weights were returned (0 = initial weights).
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_history: Vec<f64>,
}

fn check_compat(w: &Weights, data: &Dataset, lik: &Likelihood) -> Result<()> {
    lik.validate()?;
    if w.output_dim() != lik.latent_dim() {
        return Err(dim_err(format!(
            "network has {} outputs but {} likelihood needs {}",
            w.output_dim(),
            lik.name(),
            lik.latent_dim()
        )));
    }
    if !data.is_empty() && data.dim() != w.input_dim() {
        return Err(dim_err(format!(
            "data has {} features, network expects {}",
            data.dim(),
            w.input_dim()
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood over `data`.
pub fn mean_nll(w: &Weights, data: &Dataset, lik: &Likelihood) -> Result<f64> {
    check_compat(w, data, lik)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let f = forward_cached(w, data.x.row(i));
        total -= lik.log_density(data.target(i), f.output())?;
    }
    Ok(total / data.len() as f64)
}

/// Full-batch objective `Σ −log p + (δ/2)‖w‖²` and its gradient.
pub fn objective_and_grad(w: &Weights, data: &Dataset, lik: &Likelihood, prior_precision: f64) -> Result<(f64, Vec<f64>)> {
    check_compat(w, data, lik)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; w.num_params()];
    let nll = batch_nll_grad(w, data, lik, &idx, 1.0, &mut grad)?;
    let reg = add_weight_decay(w, prior_precision, &mut grad);
    Ok((nll + reg, grad))
}

/// Adds `scale · ∇ Σ_{i∈idx} −log p(yᵢ|fᵢ)` into `grad`, returning the unscaled sum.
fn batch_nll_grad(
    w: &Weights,
    data: &Dataset,
    lik: &Likelihood,
    idx: &[usize],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let mut nll = 0.0;
    for &i in idx {
        let cache = forward_cached(w, data.x.row(i));
        let y = data.target(i);
        nll -= lik.log_density(y, cache.output())?;
        let duals = lik.dual_alpha_beta(y, cache.output())?;
        let out_grad: Vec<f64> = duals.alpha.iter().map(|a| -a * scale).collect();
        backprop_into(w, &cache, &out_grad, grad);
    }
    Ok(nll)
}

fn add_weight_decay(w: &Weights, delta: f64, grad: &mut [f64]) -> f64 {
    for (g, v) in grad.iter_mut().zip(w.values()) {
        *g += delta * v;
    }
    0.5 * delta * w.squared_norm()
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(lr: f64, p: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains a freshly initialized network (`init_weights(spec, cfg.seed)`).
pub fn train_map(data: &Dataset, spec: &NetworkSpec, lik: &Likelihood, cfg: &TrainConfig, val: &Dataset) -> Result<Weights> {
    train_map_with_report(data, spec, lik, cfg, val).map(|(w, _)| w)
}

pub fn train_map_with_report(
    data: &Dataset,
    spec: &NetworkSpec,
    lik: &Likelihood,
    cfg: &TrainConfig,
    val: &Dataset,
) -> Result<(Weights, TrainReport)> {
    let init = init_weights(spec, cfg.seed)?;
    train_from(init, data, lik, cfg, val, None)
}

/// Minibatch Adam from `init`. Each minibatch uses the unbiased full-data
/// estimate `(N/B)·Σ_batch −log p + (δ/2)‖w‖² + penalty`. The returned weights
/// are those with the lowest validation NLL (plus `penalty / N` when a
/// penalty is given), evaluated once per epoch.
pub fn train_from(
    init: Weights,
    data: &Dataset,
    lik: &Likelihood,
    cfg: &TrainConfig,
    val: &Dataset,
    penalty: Option<&dyn Penalty>,
) -> Result<(Weights, TrainReport)> {
    check_compat(&init, data, lik)?;
    check_compat(&init, val, lik)?;
    if data.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation data must be non-empty".into()));
    }
    cfg.validate(data.len())?;

    let n = data.len();
    let p = init.num_params();
    let mut w = init;
    let mut adam = Adam::new(cfg.learning_rate, p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; p];

    // With a penalty, checkpoints are compared on the per-sample regularized
    // objective so that selection does not undo what the penalty protects.
    let selection_loss = |w: &Weights| -> Result<f64> {
        let mut loss = mean_nll(w, val, lik)?;
        if let Some(pen) = penalty {
            let mut scratch = vec![0.0; w.num_params()];
            loss += pen.value_and_grad(w, &mut scratch) / n as f64;
        }
        Ok(loss)
    };
    let mut best_loss = selection_loss(&w)?;
    if !best_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut best = w.clone();
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_val_loss: best_loss,
        val_history: vec![best_loss],
    };
    let mut since_improvement = 0;

    for epoch in 1..=cfg.max_epochs {
        if since_improvement >= cfg.patience {
            break;
        }
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = n as f64 / batch.len() as f64;
            let nll = batch_nll_grad(&w, data, lik, batch, scale, &mut grad)?;
            let mut objective = scale * nll + add_weight_decay(&w, cfg.prior_precision, &mut grad);
            if let Some(pen) = penalty {
                objective += pen.value_and_grad(&w, &mut grad);
            }
            if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam.step(w.values_mut(), &grad);
        }
        let val_loss = selection_loss(&w)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.epochs_run = epoch;
        report.val_history.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = w.clone();
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
    }
    Ok((best, report))
}

/// Predictive of the network alone: the likelihood evaluated at `f_w(x)`.
pub fn network_predictive(w: &Weights, lik: &Likelihood, x: &Matrix) -> Result<Vec<RowPredictive>> {
    let f = forward(w, x)?;
    let zeros = vec![0.0; f.cols()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    f.row_iter().map(|row| lik.expected_prob(row, &zeros, 0, &mut rng)).collect()
}
