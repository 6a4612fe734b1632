//! Function-space regularization for learning a sequence of tasks.
//!
//! After each task a small memory `(Z, u = f_w*(Z), B̄⁻¹)` is kept per output,
//! with `B̄⁻¹ = K_zz⁻¹ B_u K_zz⁻¹` built from that task's duals. Later tasks add
//!
//! ```text
//! R(w) = ½ Σ_s Σ_c (1/M) (u_sc − f_w(Z_s)_c)ᵀ B̄⁻¹_sc (u_sc − f_w(Z_s)_c)
//! ```
//!
//! scaled by `τ` to their training objective.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::likelihood::Likelihood;
use crate::linalg::Matrix;
use crate::metrics::argmax;
use crate::nn::{backprop_into, forward, forward_cached, init_weights, NetworkSpec, Weights};
use crate::sparse::{sample_inducing, SparsePosterior, DEFAULT_BATCH};
use crate::train::{train_from, Penalty, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMemory {
    #[serde(rename = "Z")]
    pub z: Matrix,
    /// Network outputs at `z` when the task finished (`M × C`).
    pub u: Matrix,
    /// One `M × M` metric per output.
    pub bbar_inv: Vec<Matrix>,
}

impl TaskMemory {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub tasks: Vec<TaskMemory>,
    pub observed_classes: BTreeSet<usize>,
}

/// Chooses the per-output metric stored for a finished task.
pub trait MemoryMetric: Send + Sync {
    fn name(&self) -> &'static str;

    /// Metric for output `c` of a task summarized by `post`.
    fn metric(&self, post: &SparsePosterior, c: usize, observed: bool) -> Result<Matrix>;
}

/// `K_zz⁻¹ B_u K_zz⁻¹` for observed outputs, identity for the rest.
pub struct DualMetric;

impl MemoryMetric for DualMetric {
    fn name(&self) -> &'static str {
        "dual"
    }

    fn metric(&self, post: &SparsePosterior, c: usize, observed: bool) -> Result<Matrix> {
        let m = post.inducing().len();
        if !observed {
            return Ok(Matrix::identity(m));
        }
        // K⁻¹ B K⁻¹ = L⁻ᵀ (L⁻¹ B L⁻ᵀ) L⁻¹, starting from the whitened B.
        let l = post.kzz_chol()[c];
        let bw = &post.whitened_duals().b[c];
        let mut half = Matrix::zeros(m, m);
        for j in 0..m {
            let mut col = bw.col(j);
            l.backward_substitute(&mut col);
            half.row_mut(j).copy_from_slice(&col);
        }
        // `half` holds (L⁻ᵀ B̃)ᵀ = B̃ L⁻¹ row by row.
        let mut out = Matrix::zeros(m, m);
        for j in 0..m {
            let mut col = half.col(j);
            l.backward_substitute(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                out.row_mut(i)[j] = v;
            }
        }
        out.symmetrize();
        if !out.is_finite() {
            return Err(Error::NonFinite("task memory metric".into()));
        }
        Ok(out)
    }
}

/// Identity for every output: plain squared distance in function space.
pub struct IdentityMetric;

impl MemoryMetric for IdentityMetric {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn metric(&self, post: &SparsePosterior, _c: usize, _observed: bool) -> Result<Matrix> {
        Ok(Matrix::identity(post.inducing().len()))
    }
}

pub fn memory_metric(name: &str) -> Result<Box<dyn MemoryMetric>> {
    let all: [Box<dyn MemoryMetric>; 2] = [Box::new(DualMetric), Box::new(IdentityMetric)];
    let names: Vec<&str> = all.iter().map(|m| m.name()).collect();
    let available = names.join(", ");
    all.into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "memory metric",
            name: name.to_string(),
            available,
        })
}

/// Output indices that count as observed once `data` has been seen.
fn classes_in(data: &Dataset, lik: &Likelihood) -> BTreeSet<usize> {
    match lik {
        Likelihood::Categorical { .. } => data.y.classes().map(|c| c.iter().copied().collect()).unwrap_or_default(),
        _ => std::iter::once(0).collect(),
    }
}

/// Summarizes a finished task. `observed` lists the outputs that have been
/// seen so far (including this task); all others get an identity metric.
#[allow(clippy::too_many_arguments)]
pub fn build_task_memory(
    data: &Dataset,
    w_star: &Weights,
    lik: Likelihood,
    prior_precision: f64,
    m: usize,
    seed: u64,
    observed: &BTreeSet<usize>,
    metric: &dyn MemoryMetric,
    batch: usize,
) -> Result<TaskMemory> {
    let z = sample_inducing(&data.x, m, seed)?;
    let weights = Arc::new(w_star.clone());
    let post = SparsePosterior::fit(data, weights, lik, prior_precision, z, batch)?;
    let u = forward(w_star, &post.inducing().z)?;
    let bbar_inv = (0..w_star.output_dim())
        .map(|c| metric.metric(&post, c, observed.contains(&c)))
        .collect::<Result<_>>()?;
    Ok(TaskMemory {
        z: post.inducing().z.clone(),
        u,
        bbar_inv,
    })
}

impl MemoryBuffer {
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// `R(w)`, adding `∂R/∂w` into `grad` when given.
    pub fn regularizer_with_grad(&self, w: &Weights, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let c = w.output_dim();
        let mut total = 0.0;
        for task in &self.tasks {
            let m = task.len();
            if task.u.shape() != (m, c) || task.bbar_inv.len() != c || task.z.cols() != w.input_dim() {
                return Err(dim_err("task memory does not match the network"));
            }
            let inv_m = 1.0 / m as f64;
            let caches: Vec<_> = task.z.row_iter().map(|z| forward_cached(w, z)).collect();
            // d[c][i] = u_ic − f_w(z_i)_c
            let mut out_grad = Matrix::zeros(m, c);
            for cls in 0..c {
                let d: Vec<f64> = (0..m).map(|i| task.u[(i, cls)] - caches[i].output()[cls]).collect();
                let bd = task.bbar_inv[cls].matvec(&d)?;
                total += 0.5 * inv_m * crate::linalg::dot(&d, &bd);
                for i in 0..m {
                    out_grad.row_mut(i)[cls] = -inv_m * bd[i];
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                for (i, cache) in caches.iter().enumerate() {
                    backprop_into(w, cache, out_grad.row(i), g);
                }
            }
        }
        Ok(total)
    }

    pub fn regularizer(&self, w: &Weights) -> Result<f64> {
        self.regularizer_with_grad(w, None)
    }
}

/// `weight·R(w)` as a training penalty.
pub struct ClPenalty<'a> {
    pub buffer: &'a MemoryBuffer,
    pub weight: f64,
}

impl Penalty for ClPenalty<'_> {
    fn value_and_grad(&self, w: &Weights, grad: &mut [f64]) -> f64 {
        let mut g = vec![0.0; grad.len()];
        match self.buffer.regularizer_with_grad(w, Some(&mut g)) {
            Ok(r) => {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += self.weight * b;
                }
                self.weight * r
            }
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClConfig {
    pub tau: f64,
    pub points_per_task: usize,
    pub train: TrainConfig,
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

impl ClConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be finite and non-negative, got {}", self.tau)));
        }
        if self.points_per_task == 0 {
            return Err(Error::InvalidConfig("points_per_task must be at least 1".into()));
        }
        memory_metric(&self.metric)?;
        Ok(())
    }
}

/// Training, validation and test data of one task.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Trains on one task from `w_init` under the memory of earlier tasks, then
/// summarizes the task. `task_index` seeds the inducing-point draw.
///
/// The task objective is `(1/N)(Σ −log p + (δ/2)‖w‖²) + τ·R(w)`, so `τ` is
/// measured against the per-sample loss. The trainer works with the summed
/// loss, which puts a weight of `N·τ` on the regularizer.
pub fn train_task(
    task: &TaskData,
    w_init: Weights,
    buffer: &MemoryBuffer,
    cfg: &ClConfig,
    lik: &Likelihood,
    task_index: usize,
) -> Result<(Weights, TaskMemory)> {
    cfg.validate()?;
    let penalty = ClPenalty {
        buffer,
        weight: cfg.tau * task.train.len() as f64,
    };
    let use_penalty = cfg.tau > 0.0 && !buffer.is_empty();
    let (w, _) = train_from(
        w_init,
        &task.train,
        lik,
        &cfg.train,
        &task.val,
        use_penalty.then_some(&penalty as &dyn Penalty),
    )?;
    let mut observed = buffer.observed_classes.clone();
    observed.extend(classes_in(&task.train, lik));
    let metric = memory_metric(&cfg.metric)?;
    let m = cfg.points_per_task.min(task.train.len());
    let memory = build_task_memory(
        &task.train,
        &w,
        *lik,
        cfg.train.prior_precision,
        m,
        cfg.train.seed.wrapping_add(task_index as u64),
        &observed,
        metric.as_ref(),
        cfg.batch,
    )?;
    Ok((w, memory))
}

/// Fraction of rows whose highest network output matches the class.
/// Single-output Bernoulli models predict class 1 when the logit is positive.
pub fn network_accuracy(w: &Weights, data: &Dataset) -> Result<f64> {
    let y = data
        .y
        .classes()
        .ok_or_else(|| Error::InvalidTarget("accuracy needs class targets".into()))?;
    if y.is_empty() {
        return Err(Error::InvalidConfig("accuracy of an empty dataset".into()));
    }
    let f = forward(w, &data.x)?;
    let hits = (0..y.len())
        .filter(|&i| {
            let row = f.row(i);
            let pred = if row.len() == 1 { usize::from(row[0] > 0.0) } else { argmax(row) };
            pred == y[i]
        })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumReport {
    /// `accuracy[i][j]`: accuracy on task `j`'s test data after training task `i`.
    pub accuracy: Vec<Vec<f64>>,
    /// Mean over tasks of the final model's accuracy.
    pub average_final_accuracy: f64,
    pub tau: f64,
    pub metric: String,
}

/// Trains on `tasks` in order with a single shared output head.
pub fn run_continuum(
    tasks: &[TaskData],
    spec: &NetworkSpec,
    lik: &Likelihood,
    cfg: &ClConfig,
) -> Result<(ContinuumReport, Weights, MemoryBuffer)> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("a continuum needs at least one task".into()));
    }
    cfg.validate()?;
    let mut w = init_weights(spec, cfg.train.seed)?;
    let mut buffer = MemoryBuffer::default();
    let mut accuracy = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        let (w_t, memory) = train_task(task, w, &buffer, cfg, lik, t)?;
        w = w_t;
        buffer.observed_classes.extend(classes_in(&task.train, lik));
        buffer.tasks.push(memory);
        accuracy.push(
            tasks
                .iter()
                .map(|tj| network_accuracy(&w, &tj.test))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let last = accuracy.last().expect("at least one task");
    let average_final_accuracy = last.iter().sum::<f64>() / last.len() as f64;
    Ok((
        ContinuumReport {
            accuracy,
            average_final_accuracy,
            tau: cfg.tau,
            metric: cfg.metric.clone(),
        },
        w,
        buffer,
    ))
}
