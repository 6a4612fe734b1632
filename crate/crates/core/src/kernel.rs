//! Empirical neural tangent kernel of a trained network,
//! `κ_c(x, x') = (1/δ) J_c(x) · J_c(x')`, with `J_c` the row of the Jacobian
//! belonging to output `c`. Outputs are treated independently, so every
//! quantity here is a list with one entry per output.

use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::{jacobian_unchecked, Weights};

#[derive(Debug, Clone)]
pub struct NtkKernel {
    weights: Arc<Weights>,
    prior_precision: f64,
}

/// Per-output Jacobians of a point set: `per_class[c]` is `n × P`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianStack {
    pub per_class: Vec<Matrix>,
}

impl JacobianStack {
    pub fn len(&self) -> usize {
        self.per_class.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Kernel values between two point sets, one `A × B` matrix per output.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub per_class: Vec<Matrix>,
}

impl NtkKernel {
    pub fn new(weights: Arc<Weights>, prior_precision: f64) -> Result<Self> {
        if !(prior_precision.is_finite() && prior_precision > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "prior precision must be positive, got {prior_precision}"
            )));
        }
        Ok(Self {
            weights,
            prior_precision,
        })
    }

    pub fn weights(&self) -> &Arc<Weights> {
        &self.weights
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn num_outputs(&self) -> usize {
        self.weights.output_dim()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() > 0 && x.cols() != self.weights.input_dim() {
            return Err(dim_err(format!(
                "kernel input has {} columns, network expects {}",
                x.cols(),
                self.weights.input_dim()
            )));
        }
        Ok(())
    }

    pub fn jacobians(&self, x: &Matrix) -> Result<JacobianStack> {
        self.check_input(x)?;
        let c = self.num_outputs();
        let p = self.weights.num_params();
        let mut per_class: Vec<Matrix> = (0..c).map(|_| Matrix::zeros(x.rows(), p)).collect();
        for (i, row) in x.row_iter().enumerate() {
            let jac = jacobian_unchecked(&self.weights, row);
            for (k, m) in per_class.iter_mut().enumerate() {
                m.row_mut(i).copy_from_slice(jac.row(k));
            }
        }
        Ok(JacobianStack { per_class })
    }

    /// Kernel between two precomputed Jacobian stacks.
    pub fn gram_from_stacks(&self, a: &JacobianStack, b: &JacobianStack) -> Result<GramBlock> {
        if a.per_class.len() != b.per_class.len() {
            return Err(dim_err("jacobian stacks with different output counts"));
        }
        let inv_delta = 1.0 / self.prior_precision;
        let per_class = a
            .per_class
            .iter()
            .zip(&b.per_class)
            .map(|(ja, jb)| ja.matmul_transposed(jb).map(|g| g.scaled(inv_delta)))
            .collect::<Result<_>>()?;
        Ok(GramBlock { per_class })
    }

    /// Kernel between cached Jacobians of `A` and the rows of `b`, processed in
    /// row batches so that at most `batch` Jacobians of `b` are held at once.
    pub fn cross_gram(&self, a: &JacobianStack, b: &Matrix, batch: usize) -> Result<GramBlock> {
        self.check_input(b)?;
        let batch = batch.max(1);
        let c = self.num_outputs();
        let mut per_class: Vec<Matrix> = (0..c).map(|_| Matrix::zeros(a.len(), b.rows())).collect();
        let mut start = 0;
        while start < b.rows() {
            let end = (start + batch).min(b.rows());
            let idx: Vec<usize> = (start..end).collect();
            let jb = self.jacobians(&b.select_rows(&idx))?;
            let block = self.gram_from_stacks(a, &jb)?;
            for (dst, src) in per_class.iter_mut().zip(&block.per_class) {
                for i in 0..a.len() {
                    dst.row_mut(i)[start..end].copy_from_slice(src.row(i));
                }
            }
            start = end;
        }
        Ok(GramBlock { per_class })
    }

    /// `κ_c(A, B)` for every output. Entries do not depend on `batch`.
    pub fn gram(&self, a: &Matrix, b: &Matrix, batch: usize) -> Result<GramBlock> {
        self.check_input(a)?;
        let ja = self.jacobians(a)?;
        self.cross_gram(&ja, b, batch)
    }

    /// `κ_c(xᵢ, xᵢ)` for every row and output (`result[c][i]`).
    pub fn diag(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let c = self.num_outputs();
        let inv_delta = 1.0 / self.prior_precision;
        let mut out = vec![Vec::with_capacity(x.rows()); c];
        for row in x.row_iter() {
            let jac = jacobian_unchecked(&self.weights, row);
            for (k, o) in out.iter_mut().enumerate() {
                let j = jac.row(k);
                o.push(dot(j, j) * inv_delta);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_weights, Activation, NetworkSpec};

    fn net(seed: u64) -> Arc<Weights> {
        let spec = NetworkSpec::new(2, 3, vec![5, 4], Activation::Tanh).unwrap();
        Arc::new(init_weights(&spec, seed).unwrap())
    }

    fn points(n: usize) -> Matrix {
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let t = i as f64;
                [(0.7 * t).sin(), (1.3 * t).cos() - 0.2]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn linear_model_kernel_is_inner_product() {
        let spec = NetworkSpec::new(1, 1, vec![], Activation::Tanh).unwrap().without_bias();
        let w = Weights::from_values(spec, vec![0.3]).unwrap();
        let k = NtkKernel::new(Arc::new(w), 1.0).unwrap();
        let x = Matrix::column(&[1.0, 2.0, -1.5]);
        let g = k.gram(&x, &x, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.per_class[0][(i, j)], x[(i, 0)] * x[(j, 0)]);
            }
        }
        assert_eq!(k.diag(&Matrix::column(&[2.0])).unwrap()[0][0], 4.0);
    }

    #[test]
    fn bias_adds_a_constant() {
        // f = w·x + b, so the Jacobian row is [x, 1].
        let spec = NetworkSpec::new(1, 1, vec![], Activation::Tanh).unwrap();
        let w = Weights::from_values(spec, vec![0.3, 0.0]).unwrap();
        let k = NtkKernel::new(Arc::new(w), 1.0).unwrap();
        let x = Matrix::column(&[1.0, 2.0]);
        let g = k.gram(&x, &x, 1).unwrap();
        assert_eq!(g.per_class[0][(0, 1)], 3.0);
    }

    #[test]
    fn single_point_is_scaled_squared_norm() {
        let k = NtkKernel::new(net(1), 2.0).unwrap();
        let x = points(1);
        let g = k.gram(&x, &x, 1).unwrap();
        let jac = crate::nn::jacobian(k.weights(), x.row(0)).unwrap();
        for c in 0..3 {
            let expected = dot(jac.row(c), jac.row(c)) / 2.0;
            assert!((g.per_class[c][(0, 0)] - expected).abs() <= 1e-14 * expected.abs().max(1.0));
            assert!(g.per_class[c][(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn batching_does_not_change_results() {
        let k = NtkKernel::new(net(2), 0.5).unwrap();
        let a = points(4);
        let b = points(9);
        let reference = k.gram(&a, &b, 9).unwrap();
        for batch in [1, 2, 4, 100] {
            assert_eq!(k.gram(&a, &b, batch).unwrap(), reference);
        }
    }

    #[test]
    fn diag_matches_gram_diagonal() {
        let k = NtkKernel::new(net(3), 0.8).unwrap();
        let x = points(6);
        let g = k.gram(&x, &x, 3).unwrap();
        let d = k.diag(&x).unwrap();
        for c in 0..3 {
            for i in 0..6 {
                assert!((g.per_class[c][(i, i)] - d[c][i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn prior_precision_scales_inversely() {
        let x = points(5);
        let g1 = NtkKernel::new(net(4), 1.0).unwrap().gram(&x, &x, 5).unwrap();
        let g2 = NtkKernel::new(net(4), 2.0).unwrap().gram(&x, &x, 5).unwrap();
        for (a, b) in g1.per_class.iter().zip(&g2.per_class) {
            assert!(a.scaled(0.5).sub(b).unwrap().max_abs() <= 1e-15 * a.max_abs());
        }
    }

    #[test]
    fn self_gram_is_symmetric() {
        let k = NtkKernel::new(net(5), 1.0).unwrap();
        let x = points(7);
        let g = k.gram(&x, &x, 3).unwrap();
        for m in &g.per_class {
            assert!(m.relative_asymmetry() <= 1e-10);
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let k = NtkKernel::new(net(0), 1.0).unwrap();
        assert!(k.gram(&Matrix::zeros(2, 3), &points(2), 1).is_err());
        assert!(NtkKernel::new(net(0), 0.0).is_err());
    }
}
