//! Posterior constructions selectable by name.
//!
//! Every method turns a trained network and its training data into something
//! that can predict latent marginals. Front-ends look methods up by the names
//! in [`PosteriorRegistry::names`].

use std::fmt::Debug;
use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exact::FullGp;
use crate::likelihood::{Likelihood, RowPredictive};
use crate::linalg::Matrix;
use crate::nn::Weights;
use crate::sparse::{
    gp_subset_fit, predictive_from_latent, sample_inducing, LatentPrediction, MeanMode, SparsePosterior,
};

pub trait FunctionPosterior: Debug + Send + Sync {
    fn likelihood(&self) -> &Likelihood;

    fn predict_f(&self, x: &Matrix) -> Result<LatentPrediction>;

    fn predict_y(&self, x: &Matrix, samples: usize, seed: u64) -> Result<Vec<RowPredictive>> {
        predictive_from_latent(self.likelihood(), &self.predict_f(x)?, samples, seed)
    }

    /// The inducing-point form, when the posterior has one.
    fn as_sparse(&self) -> Option<&SparsePosterior> {
        None
    }
}

impl FunctionPosterior for SparsePosterior {
    fn likelihood(&self) -> &Likelihood {
        SparsePosterior::likelihood(self)
    }

    fn predict_f(&self, x: &Matrix) -> Result<LatentPrediction> {
        SparsePosterior::predict_f(self, x)
    }

    fn as_sparse(&self) -> Option<&SparsePosterior> {
        Some(self)
    }
}

impl FunctionPosterior for FullGp {
    fn likelihood(&self) -> &Likelihood {
        FullGp::likelihood(self)
    }

    fn predict_f(&self, x: &Matrix) -> Result<LatentPrediction> {
        FullGp::predict_f(self, x)
    }
}

/// Everything a method may need to build a posterior.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub data: &'a Dataset,
    pub weights: Arc<Weights>,
    pub likelihood: Likelihood,
    pub prior_precision: f64,
    pub num_inducing: usize,
    pub seed: u64,
    pub batch: usize,
    pub mean_mode: MeanMode,
}

pub trait PosteriorMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(&self, ctx: &FitContext<'_>) -> Result<Box<dyn FunctionPosterior>>;
}

/// Inducing points drawn from the data, duals from every training point.
pub struct SparseMethod;

impl PosteriorMethod for SparseMethod {
    fn name(&self) -> &'static str {
        "sparse"
    }

    fn fit(&self, ctx: &FitContext<'_>) -> Result<Box<dyn FunctionPosterior>> {
        let z = sample_inducing(&ctx.data.x, ctx.num_inducing, ctx.seed)?;
        let post = SparsePosterior::fit(
            ctx.data,
            ctx.weights.clone(),
            ctx.likelihood,
            ctx.prior_precision,
            z,
            ctx.batch,
        )?;
        Ok(Box::new(post.with_mean_mode(ctx.mean_mode)))
    }
}

/// Same inducing points, but only they contribute to the duals.
pub struct SubsetMethod;

impl PosteriorMethod for SubsetMethod {
    fn name(&self) -> &'static str {
        "subset"
    }

    fn fit(&self, ctx: &FitContext<'_>) -> Result<Box<dyn FunctionPosterior>> {
        let z = sample_inducing(&ctx.data.x, ctx.num_inducing, ctx.seed)?;
        let post = gp_subset_fit(
            ctx.data,
            ctx.weights.clone(),
            ctx.likelihood,
            ctx.prior_precision,
            z,
            ctx.batch,
        )?;
        Ok(Box::new(post.with_mean_mode(ctx.mean_mode)))
    }
}

/// Dense GP over all training points; ignores the inducing settings.
pub struct FullMethod;

impl PosteriorMethod for FullMethod {
    fn name(&self) -> &'static str {
        "full"
    }

    fn fit(&self, ctx: &FitContext<'_>) -> Result<Box<dyn FunctionPosterior>> {
        let gp = FullGp::fit(ctx.data, ctx.weights.clone(), ctx.likelihood, ctx.prior_precision)?;
        Ok(Box::new(gp.with_mean_mode(ctx.mean_mode)))
    }
}

pub struct PosteriorRegistry {
    methods: Vec<Box<dyn PosteriorMethod>>,
}

impl Default for PosteriorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SparseMethod));
        r.register(Box::new(SubsetMethod));
        r.register(Box::new(FullMethod));
        r
    }
}

impl PosteriorRegistry {
    pub fn empty() -> Self {
        Self { methods: Vec::new() }
    }

    /// Adds a method, replacing any existing one with the same name.
    pub fn register(&mut self, method: Box<dyn PosteriorMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn PosteriorMethod> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "posterior method",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}
