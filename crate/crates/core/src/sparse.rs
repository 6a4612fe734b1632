//! Sparse function-space posterior of a trained network.
//!
//! Every training point contributes to the inducing-point summaries through
//! its Laplace duals:
//!
//! ```text
//! α_u = Σ_i k_zi α̂_i        B_u = Σ_i k_zi β̂_i k_ziᵀ
//! ```
//!
//! and predictions use
//!
//! ```text
//! E[f]   = k_zᵀ K_zz⁻¹ α_u
//! Var[f] = k** − k_zᵀ K_zz⁻¹ k_z + k_zᵀ (K_zz + B_u)⁻¹ k_z
//! ```
//!
//! Sums run over samples in ascending index order, one sample at a time, so the
//! result is bitwise independent of the batch size used to evaluate kernels.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_permutation, Dataset};
use crate::error::{dim_err, Error, Result};
use crate::kernel::{JacobianStack, NtkKernel};
use crate::likelihood::{Likelihood, RowPredictive};
use crate::linalg::{cholesky_jittered, dot, gram_root_jittered, CholeskyFactor, GramRoot, Matrix};
use crate::nn::{forward, Weights};

/// Raw variances below this are treated as a numerical failure rather than
/// rounding noise.
pub const VARIANCE_TOLERANCE: f64 = -1e-10;

pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    #[serde(rename = "Z")]
    pub z: Matrix,
    /// Rows of the training inputs the points were drawn from, in draw order.
    pub source_indices: Option<Vec<usize>>,
    pub seed: u64,
}

impl InducingSet {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }
}

/// Draws `m` distinct training rows uniformly at random.
pub fn sample_inducing(x: &Matrix, m: usize, seed: u64) -> Result<InducingSet> {
    if m == 0 || m > x.rows() {
        return Err(Error::MTooLarge {
            requested: m,
            available: x.rows(),
        });
    }
    let idx = seeded_permutation(x.rows(), m, seed);
    Ok(InducingSet {
        z: x.select_rows(&idx),
        source_indices: Some(idx),
        seed,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// Mean of the linearized GP, `k_zᵀ K_zz⁻¹ α_u`.
    #[default]
    ZeroMean,
    /// Network output at the linearization point; variance unchanged.
    NnMean,
    /// Posterior mean of the inducing values given the pseudo-targets
    /// `ỹ_i = α̂_i + β̂_i f_i`: `k_zᵀ (K_zz + B_u)⁻¹ Σ_i k_zi ỹ_i`. Agrees with
    /// `zero_mean` when the network sits exactly at a stationary point and
    /// `f = J·w`; otherwise it stays a regression on the targets.
    PseudoTargets,
}

impl MeanMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero_mean" => Ok(MeanMode::ZeroMean),
            "nn_mean" => Ok(MeanMode::NnMean),
            "pseudo_targets" => Ok(MeanMode::PseudoTargets),
            _ => Err(Error::UnknownStrategy {
                kind: "mean mode",
                name: s.to_string(),
                available: "nn_mean, pseudo_targets, zero_mean".into(),
            }),
        }
    }
}

/// Per-output inducing summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualParams {
    pub alpha_u: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Matrix>,
}

impl DualParams {
    pub fn zeros(num_outputs: usize, m: usize) -> Self {
        Self {
            alpha_u: vec![vec![0.0; m]; num_outputs],
            b_u: vec![Matrix::zeros(m, m); num_outputs],
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.alpha_u.len()
    }

    pub fn num_inducing(&self) -> usize {
        self.alpha_u.first().map_or(0, Vec::len)
    }

    fn validate(&self, num_outputs: usize, m: usize) -> Result<()> {
        if self.alpha_u.len() != num_outputs || self.b_u.len() != num_outputs {
            return Err(dim_err(format!(
                "duals hold {} outputs, network has {num_outputs}",
                self.alpha_u.len()
            )));
        }
        for (a, b) in self.alpha_u.iter().zip(&self.b_u) {
            if a.len() != m || b.shape() != (m, m) {
                return Err(dim_err(format!("duals do not match {m} inducing points")));
            }
            if !a.iter().all(|v| v.is_finite()) || !b.is_finite() {
                return Err(Error::NonFinite("dual parameters".into()));
            }
        }
        Ok(())
    }
}

/// The same summaries expressed in the basis `L⁻¹`, where `L·Lᵀ = K_zz + jI`:
/// `alpha = L⁻¹ α_u` and `b = L⁻¹ B_u L⁻ᵀ`. Accumulated directly from
/// `L⁻¹ k_zi`, which is computed without inverting `L`, so predictions stay
/// accurate when `K_zz` is badly conditioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenedDuals {
    pub alpha: Vec<Vec<f64>>,
    pub b: Vec<Matrix>,
    /// `Σ_i (α̂_i + β̂_i f_i) L⁻¹ k_zi`; needs the network outputs, so it is
    /// unknown when the whitened form is rebuilt from plain duals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<Vec<f64>>>,
}

impl WhitenedDuals {
    fn zeros(num_outputs: usize, m: usize) -> Self {
        Self {
            alpha: vec![vec![0.0; m]; num_outputs],
            b: vec![Matrix::zeros(m, m); num_outputs],
            target: Some(vec![vec![0.0; m]; num_outputs]),
        }
    }

    fn from_duals(duals: &DualParams, roots: &[GramRoot]) -> Self {
        let mut alpha = Vec::with_capacity(roots.len());
        let mut b = Vec::with_capacity(roots.len());
        for (c, root) in roots.iter().enumerate() {
            let f = root.factor();
            let mut a = duals.alpha_u[c].clone();
            f.forward_substitute(&mut a);
            alpha.push(a);
            // L⁻¹ B L⁻ᵀ = L⁻¹ (L⁻¹ B)ᵀ since B is symmetric.
            let m = f.dim();
            let mut half = Matrix::zeros(m, m);
            for j in 0..m {
                let mut col = duals.b_u[c].col(j);
                f.forward_substitute(&mut col);
                half.row_mut(j).copy_from_slice(&col);
            }
            let mut full = Matrix::zeros(m, m);
            for j in 0..m {
                let mut col = half.col(j);
                f.forward_substitute(&mut col);
                for (i, v) in col.into_iter().enumerate() {
                    full.row_mut(i)[j] = v;
                }
            }
            full.symmetrize();
            b.push(full);
        }
        Self { alpha, b, target: None }
    }
}

/// Latent marginals, `N × C` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrediction {
    pub mean: Matrix,
    pub var: Matrix,
}

fn add_scaled(dst: &mut [f64], s: f64, v: &[f64]) {
    for (d, &x) in dst.iter_mut().zip(v) {
        *d += s * x;
    }
}

/// `B += s·v·vᵀ` on the upper triangle only.
fn add_rank_one_upper(b: &mut Matrix, s: f64, v: &[f64]) {
    for a in 0..v.len() {
        let sa = s * v[a];
        add_scaled(&mut b.row_mut(a)[a..], sa, &v[a..]);
    }
}

fn mirror_upper(b: &mut Matrix) {
    for a in 0..b.rows() {
        for c in 0..a {
            let v = b[(c, a)];
            b.row_mut(a)[c] = v;
        }
    }
}

fn column_into(m: &Matrix, j: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[(i, j)];
    }
}

/// Per-output factorizations of the inducing Gram matrices.
fn inducing_roots(kernel: &NtkKernel, jz: &JacobianStack) -> Result<Vec<GramRoot>> {
    let s = 1.0 / kernel.prior_precision().sqrt();
    jz.per_class
        .iter()
        .map(|j| gram_root_jittered(&j.scaled(s), 0.0))
        .collect()
}

/// `L⁻¹ k_z` for every row of a batch of Jacobians, as columns of an `M × n`
/// matrix.
fn whiten(kernel: &NtkKernel, root: &GramRoot, jb: &Matrix) -> Result<Matrix> {
    Ok(root
        .q()
        .matmul_transposed(jb)?
        .scaled(1.0 / kernel.prior_precision().sqrt()))
}

struct Accumulator<'a> {
    kernel: &'a NtkKernel,
    jz: &'a JacobianStack,
    roots: &'a [GramRoot],
    lik: &'a Likelihood,
}

impl Accumulator<'_> {
    /// Adds the contribution of `rows` (in the given order) to both forms of
    /// the duals. Only upper triangles are accumulated and mirrored at the end,
    /// so continuing an accumulation later reproduces a single pass exactly.
    fn run(
        &self,
        data: &Dataset,
        rows: &[usize],
        batch: usize,
        duals: &mut DualParams,
        white: &mut WhitenedDuals,
    ) -> Result<()> {
        let kernel = self.kernel;
        if !rows.is_empty() && data.dim() != kernel.weights().input_dim() {
            return Err(dim_err(format!(
                "data has {} features, network expects {}",
                data.dim(),
                kernel.weights().input_dim()
            )));
        }
        let m = self.jz.len();
        let c = kernel.num_outputs();
        let mut k = vec![0.0; m];
        let mut a = vec![0.0; m];
        for chunk in rows.chunks(batch.max(1)) {
            let xb = data.x.select_rows(chunk);
            let f = forward(kernel.weights(), &xb)?;
            let jb = kernel.jacobians(&xb)?;
            let kzx = kernel.gram_from_stacks(self.jz, &jb)?;
            let azx = (0..c)
                .map(|cls| whiten(kernel, &self.roots[cls], &jb.per_class[cls]))
                .collect::<Result<Vec<_>>>()?;
            for (j, &i) in chunk.iter().enumerate() {
                let d = self.lik.dual_alpha_beta(data.target(i), f.row(j))?;
                for cls in 0..c {
                    column_into(&kzx.per_class[cls], j, &mut k);
                    column_into(&azx[cls], j, &mut a);
                    let (alpha, beta) = (d.alpha[cls], d.beta[cls]);
                    add_scaled(&mut duals.alpha_u[cls], alpha, &k);
                    add_scaled(&mut white.alpha[cls], alpha, &a);
                    if let Some(t) = white.target.as_mut() {
                        add_scaled(&mut t[cls], alpha + beta * f[(j, cls)], &a);
                    }
                    if beta != 0.0 {
                        add_rank_one_upper(&mut duals.b_u[cls], beta, &k);
                        add_rank_one_upper(&mut white.b[cls], beta, &a);
                    }
                }
            }
        }
        duals.b_u.iter_mut().for_each(mirror_upper);
        white.b.iter_mut().for_each(mirror_upper);
        let finite = |a: &[Vec<f64>], b: &[Matrix]| {
            a.iter().flatten().all(|v| v.is_finite()) && b.iter().all(Matrix::is_finite)
        };
        let target_finite = white.target.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite(&duals.alpha_u, &duals.b_u) || !finite(&white.alpha, &white.b) || !target_finite {
            return Err(Error::NonFinite("accumulated dual parameters".into()));
        }
        Ok(())
    }
}

/// Fitted sparse posterior. Immutable once built; updates return a new value.
#[derive(Debug, Clone)]
pub struct SparsePosterior {
    inducing: InducingSet,
    duals: DualParams,
    white: WhitenedDuals,
    kernel: NtkKernel,
    likelihood: Likelihood,
    mean_mode: MeanMode,
    batch: usize,
    jz: JacobianStack,
    roots: Vec<GramRoot>,
    /// Per output: factor of `I + L⁻¹ B_u L⁻ᵀ`.
    inner: Vec<CholeskyFactor>,
    /// Per output: `(I + L⁻¹ B_u L⁻ᵀ)⁻¹` applied to the whitened target sum.
    target_coef: Option<Vec<Vec<f64>>>,
}

impl SparsePosterior {
    /// Builds the posterior from all rows of `data`.
    pub fn fit(
        data: &Dataset,
        weights: Arc<Weights>,
        lik: Likelihood,
        prior_precision: f64,
        inducing: InducingSet,
        batch: usize,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..data.len()).collect();
        Self::fit_rows(data, &rows, weights, lik, prior_precision, inducing, batch)
    }

    /// Builds the posterior from the listed rows only, in the order given.
    pub fn fit_rows(
        data: &Dataset,
        rows: &[usize],
        weights: Arc<Weights>,
        lik: Likelihood,
        prior_precision: f64,
        inducing: InducingSet,
        batch: usize,
    ) -> Result<Self> {
        lik.validate()?;
        if lik.latent_dim() != weights.output_dim() {
            return Err(dim_err(format!(
                "likelihood needs {} outputs, network has {}",
                lik.latent_dim(),
                weights.output_dim()
            )));
        }
        if inducing.is_empty() {
            return Err(Error::MTooLarge {
                requested: 0,
                available: data.len(),
            });
        }
        let kernel = NtkKernel::new(weights, prior_precision)?;
        let jz = kernel.jacobians(&inducing.z)?;
        let roots = inducing_roots(&kernel, &jz)?;
        let c = kernel.num_outputs();
        let mut duals = DualParams::zeros(c, inducing.len());
        let mut white = WhitenedDuals::zeros(c, inducing.len());
        Accumulator {
            kernel: &kernel,
            jz: &jz,
            roots: &roots,
            lik: &lik,
        }
        .run(data, rows, batch, &mut duals, &mut white)?;
        Self::assemble(Parts {
            inducing,
            duals,
            white,
            kernel,
            likelihood: lik,
            mean_mode: MeanMode::default(),
            batch,
            jz,
            roots,
        })
    }

    /// Rebuilds a posterior from stored duals; factorizations are recomputed.
    /// Without `white`, the whitened form is derived from `duals` by
    /// triangular solves, which loses accuracy when `K_zz` is ill-conditioned.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        inducing: InducingSet,
        duals: DualParams,
        white: Option<WhitenedDuals>,
        weights: Arc<Weights>,
        lik: Likelihood,
        prior_precision: f64,
        mean_mode: MeanMode,
        batch: usize,
    ) -> Result<Self> {
        lik.validate()?;
        let kernel = NtkKernel::new(weights, prior_precision)?;
        duals.validate(kernel.num_outputs(), inducing.len())?;
        let jz = kernel.jacobians(&inducing.z)?;
        let roots = inducing_roots(&kernel, &jz)?;
        let white = white.unwrap_or_else(|| WhitenedDuals::from_duals(&duals, &roots));
        Self::assemble(Parts {
            inducing,
            duals,
            white,
            kernel,
            likelihood: lik,
            mean_mode,
            batch,
            jz,
            roots,
        })
    }

    fn assemble(p: Parts) -> Result<Self> {
        let m = p.inducing.len();
        let c = p.kernel.num_outputs();
        p.duals.validate(c, m)?;
        let w = &p.white;
        if w.alpha.len() != c
            || w.b.len() != c
            || w.alpha.iter().any(|a| a.len() != m)
            || w.b.iter().any(|b| b.shape() != (m, m))
            || w.target.as_ref().is_some_and(|t| t.len() != c || t.iter().any(|v| v.len() != m))
        {
            return Err(dim_err("whitened duals do not match the inducing set"));
        }
        let inner = inner_factors(w)?;
        let target_coef = target_coefficients(w, &inner)?;
        Ok(Self {
            inducing: p.inducing,
            duals: p.duals,
            white: p.white,
            kernel: p.kernel,
            likelihood: p.likelihood,
            mean_mode: p.mean_mode,
            batch: p.batch.max(1),
            jz: p.jz,
            roots: p.roots,
            inner,
            target_coef,
        })
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn duals(&self) -> &DualParams {
        &self.duals
    }

    pub fn whitened_duals(&self) -> &WhitenedDuals {
        &self.white
    }

    pub fn kernel(&self) -> &NtkKernel {
        &self.kernel
    }

    pub fn weights(&self) -> &Arc<Weights> {
        self.kernel.weights()
    }

    pub fn prior_precision(&self) -> f64 {
        self.kernel.prior_precision()
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn mean_mode(&self) -> MeanMode {
        self.mean_mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn inducing_jacobians(&self) -> &JacobianStack {
        &self.jz
    }

    /// `K_zz` per output.
    pub fn kzz(&self) -> Result<Vec<Matrix>> {
        Ok(self.kernel.gram_from_stacks(&self.jz, &self.jz)?.per_class)
    }

    /// Cholesky factors of `K_zz` (plus any jitter) per output.
    pub fn kzz_chol(&self) -> Vec<&CholeskyFactor> {
        self.roots.iter().map(GramRoot::factor).collect()
    }

    /// Cholesky factors of `K_zz + jI + B_u` per output, formed as the product
    /// of the `K_zz` factor and the whitened inner factor.
    pub fn kzz_plus_b_chol(&self) -> Result<Vec<CholeskyFactor>> {
        self.roots
            .iter()
            .zip(&self.inner)
            .map(|(r, i)| {
                let l = r.factor().lower().matmul(i.lower())?;
                CholeskyFactor::from_lower(l, r.jitter_used())
            })
            .collect()
    }

    pub fn with_mean_mode(mut self, mode: MeanMode) -> Self {
        self.mean_mode = mode;
        self
    }

    /// Latent marginals without clamping negative rounding in the variance.
    pub fn predict_f_raw(&self, x: &Matrix) -> Result<LatentPrediction> {
        if self.mean_mode == MeanMode::PseudoTargets && self.target_coef.is_none() {
            return Err(Error::InvalidConfig(
                "pseudo_targets mean needs the whitened target sums, which this posterior lacks".into(),
            ));
        }
        let c = self.kernel.num_outputs();
        let n = x.rows();
        let inv_delta = 1.0 / self.kernel.prior_precision();
        let mut mean = Matrix::zeros(n, c);
        let mut var = Matrix::zeros(n, c);
        let mut a = vec![0.0; self.inducing.len()];
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(self.batch) {
            let jb = self.kernel.jacobians(&x.select_rows(chunk))?;
            for cls in 0..c {
                let jc = &jb.per_class[cls];
                let az = whiten(&self.kernel, &self.roots[cls], jc)?;
                for (j, &i) in chunk.iter().enumerate() {
                    column_into(&az, j, &mut a);
                    let jr = jc.row(j);
                    let prior = dot(jr, jr) * inv_delta;
                    let q1 = dot(&a, &a);
                    let q2 = self.inner[cls].inv_quad_form(&a);
                    mean.row_mut(i)[cls] = match (self.mean_mode, &self.target_coef) {
                        (MeanMode::PseudoTargets, Some(t)) => dot(&a, &t[cls]),
                        _ => dot(&a, &self.white.alpha[cls]),
                    };
                    var.row_mut(i)[cls] = prior - q1 + q2;
                }
            }
        }
        if self.mean_mode == MeanMode::NnMean {
            mean = forward(self.kernel.weights(), x)?;
        }
        Ok(LatentPrediction { mean, var })
    }

    /// Latent marginals; variances are clamped at zero after checking that no
    /// value falls below [`VARIANCE_TOLERANCE`].
    pub fn predict_f(&self, x: &Matrix) -> Result<LatentPrediction> {
        clamp_variance(self.predict_f_raw(x)?)
    }

    /// Observation predictive for every row, drawing `samples` Monte Carlo
    /// samples per classification row from a generator seeded with `seed`.
    pub fn predict_y(&self, x: &Matrix, samples: usize, seed: u64) -> Result<Vec<RowPredictive>> {
        predictive_from_latent(&self.likelihood, &self.predict_f(x)?, samples, seed)
    }

    /// Folds `new_data` into the duals with the same network and inducing set.
    /// The `K_zz` factorization is reused; only the inner factor is rebuilt.
    pub fn dual_update(self, new_data: &Dataset) -> Result<Self> {
        if new_data.is_empty() {
            return Ok(self);
        }
        if new_data.dim() != self.inducing.z.cols() {
            return Err(dim_err(format!(
                "update data has {} features, posterior expects {}",
                new_data.dim(),
                self.inducing.z.cols()
            )));
        }
        let mut duals = self.duals.clone();
        let mut white = self.white.clone();
        let rows: Vec<usize> = (0..new_data.len()).collect();
        Accumulator {
            kernel: &self.kernel,
            jz: &self.jz,
            roots: &self.roots,
            lik: &self.likelihood,
        }
        .run(new_data, &rows, self.batch, &mut duals, &mut white)?;
        let inner = inner_factors(&white)?;
        let target_coef = target_coefficients(&white, &inner)?;
        Ok(Self {
            duals,
            white,
            inner,
            target_coef,
            ..self
        })
    }
}

struct Parts {
    inducing: InducingSet,
    duals: DualParams,
    white: WhitenedDuals,
    kernel: NtkKernel,
    likelihood: Likelihood,
    mean_mode: MeanMode,
    batch: usize,
    jz: JacobianStack,
    roots: Vec<GramRoot>,
}

fn inner_factors(white: &WhitenedDuals) -> Result<Vec<CholeskyFactor>> {
    white
        .b
        .iter()
        .map(|b| {
            let mut a = b.clone();
            a.add_diagonal(1.0);
            cholesky_jittered(&a, 0.0)
        })
        .collect()
}

fn target_coefficients(white: &WhitenedDuals, inner: &[CholeskyFactor]) -> Result<Option<Vec<Vec<f64>>>> {
    white
        .target
        .as_ref()
        .map(|t| t.iter().zip(inner).map(|(v, f)| f.solve_vec(v)).collect())
        .transpose()
}

/// Posterior built only from the inducing rows themselves: every other
/// training point is discarded.
pub fn gp_subset_fit(
    data: &Dataset,
    weights: Arc<Weights>,
    lik: Likelihood,
    prior_precision: f64,
    inducing: InducingSet,
    batch: usize,
) -> Result<SparsePosterior> {
    let mut rows = inducing.source_indices.clone().ok_or_else(|| {
        Error::InvalidConfig("a subset posterior needs inducing points drawn from the data".into())
    })?;
    if let Some(&bad) = rows.iter().find(|&&i| i >= data.len()) {
        return Err(dim_err(format!("subset row {bad} outside data of {} rows", data.len())));
    }
    rows.sort_unstable();
    SparsePosterior::fit_rows(data, &rows, weights, lik, prior_precision, inducing, batch)
}

pub(crate) fn clamp_variance(mut p: LatentPrediction) -> Result<LatentPrediction> {
    for v in p.var.as_mut_slice() {
        if *v < VARIANCE_TOLERANCE || v.is_nan() {
            return Err(Error::NegativeVariance { value: *v });
        }
        *v = v.max(0.0);
    }
    Ok(p)
}

pub(crate) fn predictive_from_latent(
    lik: &Likelihood,
    latent: &LatentPrediction,
    samples: usize,
    seed: u64,
) -> Result<Vec<RowPredictive>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..latent.mean.rows())
        .map(|i| lik.expected_prob(latent.mean.row(i), latent.var.row(i), samples, &mut rng))
        .collect()
}
