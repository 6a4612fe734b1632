//! Dense dual-form GP over every training point. Cubic in `N`; used as the
//! reference the sparse posterior is compared against.

use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::kernel::{JacobianStack, NtkKernel};
use crate::likelihood::{Likelihood, RowPredictive};
use crate::linalg::{cholesky_jittered, default_jitter, dot, CholeskyFactor, Matrix};
use crate::nn::{forward, Weights};
use crate::sparse::{clamp_variance, predictive_from_latent, LatentPrediction, MeanMode, DEFAULT_BATCH};

pub const MAX_DENSE_N: usize = 5000;

/// `β` values are floored here before `1/β` enters the noise diagonal.
pub const MIN_BETA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FullGp {
    kernel: NtkKernel,
    likelihood: Likelihood,
    mean_mode: MeanMode,
    jx: JacobianStack,
    /// Per output: `α̂` over the training points.
    alpha: Vec<Vec<f64>>,
    /// Per output: factor of `K + diag(1/β̂)`.
    chol: Vec<CholeskyFactor>,
    /// Per output: `(K + diag(1/β̂))⁻¹ (f + α̂/β̂)`.
    target_coef: Vec<Vec<f64>>,
}

impl FullGp {
    pub fn fit(data: &Dataset, weights: Arc<Weights>, lik: Likelihood, prior_precision: f64) -> Result<Self> {
        lik.validate()?;
        let n = data.len();
        if n > MAX_DENSE_N {
            return Err(Error::NTooLarge { n, limit: MAX_DENSE_N });
        }
        if lik.latent_dim() != weights.output_dim() {
            return Err(dim_err(format!(
                "likelihood needs {} outputs, network has {}",
                lik.latent_dim(),
                weights.output_dim()
            )));
        }
        let kernel = NtkKernel::new(weights, prior_precision)?;
        let jx = kernel.jacobians(&data.x)?;
        let kxx = kernel.gram_from_stacks(&jx, &jx)?.per_class;
        let f = forward(kernel.weights(), &data.x)?;
        let c = kernel.num_outputs();
        let mut alpha = vec![Vec::with_capacity(n); c];
        let mut inv_beta = vec![Vec::with_capacity(n); c];
        let mut pseudo = vec![Vec::with_capacity(n); c];
        for i in 0..n {
            let d = lik.dual_alpha_beta(data.target(i), f.row(i))?;
            for cls in 0..c {
                let ib = 1.0 / d.beta[cls].max(MIN_BETA);
                alpha[cls].push(d.alpha[cls]);
                inv_beta[cls].push(ib);
                pseudo[cls].push(f[(i, cls)] + d.alpha[cls] * ib);
            }
        }
        let mut chol = Vec::with_capacity(c);
        for (mut k, ib) in kxx.into_iter().zip(&inv_beta) {
            for (i, v) in ib.iter().enumerate() {
                k.row_mut(i)[i] += v;
            }
            chol.push(cholesky_jittered(&k, default_jitter(&k))?);
        }
        let target_coef = chol
            .iter()
            .zip(&pseudo)
            .map(|(l, y)| l.solve_vec(y))
            .collect::<Result<_>>()?;
        Ok(Self {
            kernel,
            likelihood: lik,
            mean_mode: MeanMode::default(),
            jx,
            alpha,
            chol,
            target_coef,
        })
    }

    pub fn with_mean_mode(mut self, mode: MeanMode) -> Self {
        self.mean_mode = mode;
        self
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn predict_f_raw(&self, x: &Matrix) -> Result<LatentPrediction> {
        let c = self.kernel.num_outputs();
        let n = x.rows();
        let kxt = self.kernel.cross_gram(&self.jx, x, DEFAULT_BATCH)?;
        let prior = self.kernel.diag(x)?;
        let mut mean = Matrix::zeros(n, c);
        let mut var = Matrix::zeros(n, c);
        let mut k = vec![0.0; self.jx.len()];
        for cls in 0..c {
            let g = &kxt.per_class[cls];
            for i in 0..n {
                for (a, kv) in k.iter_mut().enumerate() {
                    *kv = g[(a, i)];
                }
                let coef = match self.mean_mode {
                    MeanMode::PseudoTargets => &self.target_coef[cls],
                    _ => &self.alpha[cls],
                };
                mean.row_mut(i)[cls] = dot(&k, coef);
                var.row_mut(i)[cls] = prior[cls][i] - self.chol[cls].inv_quad_form(&k);
            }
        }
        if self.mean_mode == MeanMode::NnMean {
            mean = forward(self.kernel.weights(), x)?;
        }
        Ok(LatentPrediction { mean, var })
    }

    pub fn predict_f(&self, x: &Matrix) -> Result<LatentPrediction> {
        clamp_variance(self.predict_f_raw(x)?)
    }

    pub fn predict_y(&self, x: &Matrix, samples: usize, seed: u64) -> Result<Vec<RowPredictive>> {
        predictive_from_latent(&self.likelihood, &self.predict_f(x)?, samples, seed)
    }
}

/// Latent predictive of the dense model at `x_test`.
pub fn full_gp_predict(
    data: &Dataset,
    weights: Arc<Weights>,
    lik: Likelihood,
    prior_precision: f64,
    x_test: &Matrix,
) -> Result<LatentPrediction> {
    FullGp::fit(data, weights, lik, prior_precision)?.predict_f(x_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use crate::nn::{Activation, NetworkSpec};

    fn scalar_model(w: f64) -> Arc<Weights> {
        let spec = NetworkSpec::new(1, 1, vec![], Activation::Tanh).unwrap().without_bias();
        Arc::new(Weights::from_values(spec, vec![w]).unwrap())
    }

    #[test]
    fn single_point_fixture() {
        let data = Dataset::new(Matrix::column(&[1.0]), Targets::Real(vec![1.0])).unwrap();
        let lik = Likelihood::Gaussian { noise_variance: 1.0 };
        let p = full_gp_predict(&data, scalar_model(0.5), lik, 1.0, &Matrix::column(&[1.0])).unwrap();
        assert!((p.mean[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.var[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pseudo_target_mean_is_gp_regression_on_single_point() {
        // k (k + σ²)⁻¹ y with k = 1, σ² = 1, y = 1.
        let data = Dataset::new(Matrix::column(&[1.0]), Targets::Real(vec![1.0])).unwrap();
        let lik = Likelihood::Gaussian { noise_variance: 1.0 };
        let gp = FullGp::fit(&data, scalar_model(0.3), lik, 1.0)
            .unwrap()
            .with_mean_mode(MeanMode::PseudoTargets);
        let p = gp.predict_f(&Matrix::column(&[1.0])).unwrap();
        assert!((p.mean[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn near_noiseless_limit_interpolates() {
        // x = 2, y = 3, δ = 1: the MAP weight is 6 / (4 + σ²).
        let s2 = 1e-6;
        let data = Dataset::new(Matrix::column(&[2.0]), Targets::Real(vec![3.0])).unwrap();
        let lik = Likelihood::Gaussian { noise_variance: s2 };
        let p = full_gp_predict(&data, scalar_model(6.0 / (4.0 + s2)), lik, 1.0, &Matrix::column(&[2.0])).unwrap();
        assert!((p.mean[(0, 0)] - 3.0).abs() < 1e-5);
        assert!(p.var[(0, 0)] < 2e-6);
    }

    #[test]
    fn rejects_oversized_data() {
        let n = MAX_DENSE_N + 1;
        let data = Dataset::new(Matrix::zeros(n, 1), Targets::Real(vec![0.0; n])).unwrap();
        let lik = Likelihood::Gaussian { noise_variance: 1.0 };
        assert!(matches!(
            FullGp::fit(&data, scalar_model(0.0), lik, 1.0),
            Err(Error::NTooLarge { .. })
        ));
    }
}
