use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use dualsparse::checkpoint::{
    load_json, load_posterior, save_json, BufferCheckpoint, PosteriorCheckpoint, WeightsCheckpoint,
};
use dualsparse::cl::{run_continuum, ContinuumReport, TaskData};
use dualsparse::data::{
    load_csv_with_classes, load_inputs_csv, make_split_tasks, partition, Dataset, Normalization, TaskKind,
};
use dualsparse::exact::FullGp;
use dualsparse::likelihood::{Likelihood, RowPredictive};
use dualsparse::linalg::Matrix;
use dualsparse::metrics::{auroc_entropy, to_original_units, EvalReport, Timing};
use dualsparse::nn::{NetworkSpec, Weights};
use dualsparse::registry::{FitContext, FunctionPosterior, PosteriorRegistry};
use dualsparse::sparse::{sample_inducing, LatentPrediction, MeanMode, SparsePosterior};
use dualsparse::train::{network_predictive, train_map_with_report, TrainReport};
use dualsparse::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn task_kind(lik: &Likelihood) -> TaskKind {
    if lik.is_classification() {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    }
}

/// Loads a labeled CSV. Without `classes`, labels are numbered in sorted order.
fn load_labeled(path: &Path, target: &str, lik: &Likelihood, classes: Option<&[String]>) -> Result<Dataset> {
    let data = load_csv_with_classes(path, target, task_kind(lik), classes)?;
    let data = if classes.is_none() { data.with_sorted_classes() } else { data };
    let limit = match *lik {
        Likelihood::Categorical { num_classes } => num_classes,
        Likelihood::Bernoulli => 2,
        Likelihood::Gaussian { .. } => return Ok(data),
    };
    if data.num_classes() > limit {
        return Err(Error::InvalidTarget(format!(
            "data has {} classes, the {} likelihood allows {limit}",
            data.num_classes(),
            lik.name()
        )));
    }
    Ok(data)
}

fn normalize(data: &Dataset, norm: Option<&Normalization>) -> Result<Dataset> {
    match norm {
        Some(n) => n.apply(data),
        None => Ok(data.clone()),
    }
}

fn select_split(raw: &Dataset, cfg: &RunConfig, split: &str) -> Result<Dataset> {
    if split == "all" {
        return Ok(raw.clone());
    }
    let [train, val, test] = partition(raw, cfg.data.fractions, cfg.data.split_seed)?;
    match split {
        "train" => Ok(train),
        "val" => Ok(val),
        "test" => Ok(test),
        other => Err(Error::UnknownStrategy {
            kind: "split",
            name: other.to_string(),
            available: "train, val, test, all".into(),
        }),
    }
}

fn parse_mode(mode: Option<&str>) -> Result<Option<MeanMode>> {
    mode.map(MeanMode::parse).transpose()
}

/// Path of `target` as stored next to `out`: the bare file name when both
/// live in the same directory, otherwise an absolute path.
fn reference_to(target: &Path, out: &Path) -> Result<String> {
    let dir = |p: &Path| -> Result<PathBuf> {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Ok(parent.canonicalize()?)
    };
    if dir(target)? == dir(out)? {
        if let Some(name) = target.file_name() {
            return Ok(name.to_string_lossy().into_owned());
        }
    }
    Ok(target.canonicalize()?.to_string_lossy().into_owned())
}

/// Report path used when none is given: `<out>.report.json`.
pub fn default_report(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn load_weights_checkpoint(path: &Path) -> Result<(WeightsCheckpoint, Weights)> {
    let ck: WeightsCheckpoint = load_json(path)?;
    let w = ck.weights()?;
    Ok((ck, w))
}

fn checkpoint_likelihood(ck: &WeightsCheckpoint, cfg: Option<&RunConfig>) -> Result<Likelihood> {
    match (ck.likelihood, cfg) {
        (Some(a), Some(c)) if a != c.likelihood => Err(Error::InvalidConfig(format!(
            "checkpoint was trained with the {} likelihood, config asks for {}",
            a.name(),
            c.likelihood.name()
        ))),
        (Some(a), _) => Ok(a),
        (None, Some(c)) => Ok(c.likelihood),
        (None, None) => Err(Error::InvalidConfig("checkpoint has no likelihood; pass --config".into())),
    }
}

#[derive(Serialize)]
struct TrainOutput {
    model: &'static str,
    split: &'static str,
    eval: EvalReport,
    training: TrainReport,
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, report: &Path) -> Result<()> {
    let raw = load_labeled(data, &cfg.data.target, &cfg.likelihood, None)?;
    let [train, val, test] = partition(&raw, cfg.data.fractions, cfg.data.split_seed)?;
    let norm = Normalization::fit(&train);
    let (train, val, test) = (norm.apply(&train)?, norm.apply(&val)?, norm.apply(&test)?);
    let mut spec = NetworkSpec::new(
        raw.dim(),
        cfg.likelihood.latent_dim(),
        cfg.network.hidden.clone(),
        cfg.network.activation,
    )?;
    if !cfg.network.bias {
        spec = spec.without_bias();
    }
    let start = Instant::now();
    let (w, training) = train_map_with_report(&train, &spec, &cfg.likelihood, &cfg.train, &val)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut ck = WeightsCheckpoint::new(&w);
    ck.prior_precision = Some(cfg.train.prior_precision);
    ck.likelihood = Some(cfg.likelihood);
    ck.preprocessing = Some(norm.clone());
    ck.classes = raw.class_names.clone();
    save_json(out, &ck)?;

    let (split, eval_data) = if test.is_empty() { ("val", &val) } else { ("test", &test) };
    let preds = to_original_units(&network_predictive(&w, &cfg.likelihood, &eval_data.x)?, &norm);
    let mut eval = EvalReport::from_predictions(&preds, &original_targets(eval_data, &norm)?)?;
    eval.nondeterministic = Timing { wall_seconds: elapsed };
    save_json(
        report,
        &TrainOutput {
            model: "nn_map",
            split,
            eval,
            training,
        },
    )
}

fn original_targets(data: &Dataset, norm: &Normalization) -> Result<dualsparse::data::Targets> {
    Ok(norm.revert(data)?.y)
}

#[allow(clippy::too_many_arguments)]
pub fn fit(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    mode: Option<&str>,
    baseline: Option<&str>,
    split: &str,
) -> Result<()> {
    let (ck, w) = load_weights_checkpoint(checkpoint)?;
    let lik = checkpoint_likelihood(&ck, Some(cfg))?;
    if let Some(d) = ck.prior_precision {
        if d != cfg.train.prior_precision {
            return Err(Error::InvalidConfig(format!(
                "checkpoint was trained with prior precision {d}, config has {}",
                cfg.train.prior_precision
            )));
        }
    }
    let raw = load_labeled(data, &cfg.data.target, &lik, ck.classes.as_deref())?;
    let fit_data = normalize(&select_split(&raw, cfg, split)?, ck.preprocessing.as_ref())?;
    let method = baseline.unwrap_or(&cfg.posterior.method);
    if method == "full" {
        return Err(Error::InvalidConfig(
            "the full GP has no inducing-point form to save; use oracle-gp".into(),
        ));
    }
    let ctx = FitContext {
        data: &fit_data,
        weights: Arc::new(w),
        likelihood: lik,
        prior_precision: cfg.train.prior_precision,
        num_inducing: cfg.posterior.num_inducing,
        seed: cfg.posterior.seed,
        batch: cfg.posterior.batch,
        mean_mode: parse_mode(mode)?.unwrap_or(cfg.posterior.mean_mode),
    };
    let post = PosteriorRegistry::default().get(method)?.fit(&ctx)?;
    let sparse = post
        .as_sparse()
        .ok_or_else(|| Error::InvalidConfig(format!("method `{method}` has no inducing-point form")))?;
    save_json(out, &PosteriorCheckpoint::new(sparse, method, &reference_to(checkpoint, out)?))
}

struct PredictionTable<'a> {
    x: &'a Matrix,
    names: &'a [String],
    latent: &'a LatentPrediction,
    probs: Option<&'a [RowPredictive]>,
    norm: Option<&'a Normalization>,
    regression: bool,
}

/// Columns: inputs, latent means, latent variances, then class probabilities
/// for classification. Regression latents are reported in target units.
fn write_predictions(out: &Path, t: PredictionTable<'_>) -> Result<()> {
    let c = t.latent.mean.cols();
    let mut header: Vec<String> = t.names.to_vec();
    header.extend((0..c).map(|k| format!("mean_{k}")));
    header.extend((0..c).map(|k| format!("var_{k}")));
    let width = t.probs.and_then(|p| p.first()).map_or(0, |r| match r {
        RowPredictive::Probs(v) => v.len(),
        RowPredictive::Gaussian { .. } => 0,
    });
    header.extend((0..width).map(|k| format!("prob_{k}")));
    let (y_mean, y_scale) = match t.norm {
        Some(n) if t.regression => (n.denormalize_y(0.0), n.y_scale()),
        _ => (0.0, 1.0),
    };
    let mut w = csv::Writer::from_path(out).map_err(Error::Csv)?;
    w.write_record(&header).map_err(Error::Csv)?;
    for i in 0..t.x.rows() {
        let mut rec: Vec<String> = t.x.row(i).iter().map(f64::to_string).collect();
        rec.extend(t.latent.mean.row(i).iter().map(|m| (m * y_scale + y_mean).to_string()));
        rec.extend(t.latent.var.row(i).iter().map(|v| (v * y_scale * y_scale).to_string()));
        if let Some(RowPredictive::Probs(p)) = t.probs.map(|p| &p[i]) {
            rec.extend(p.iter().map(f64::to_string));
        }
        w.write_record(&rec).map_err(Error::Csv)?;
    }
    w.flush()?;
    Ok(())
}

fn predict_table(
    post: &dyn FunctionPosterior,
    norm: Option<&Normalization>,
    inputs: &Path,
    target: &str,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (x_raw, names) = load_inputs_csv(inputs, target)?;
    let x = match norm {
        Some(n) => n.normalize_x(&x_raw)?,
        None => x_raw.clone(),
    };
    let latent = post.predict_f(&x)?;
    let lik = post.likelihood();
    let probs = if lik.is_classification() {
        Some(post.predict_y(&x, samples, seed)?)
    } else {
        None
    };
    write_predictions(
        out,
        PredictionTable {
            x: &x_raw,
            names: &names,
            latent: &latent,
            probs: probs.as_deref(),
            norm,
            regression: !lik.is_classification(),
        },
    )
}

pub fn predict(
    cfg: Option<&RunConfig>,
    posterior: &Path,
    data: &Path,
    out: &Path,
    mode: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let (_, wck, post) = load_posterior(posterior)?;
    let post = match parse_mode(mode)? {
        Some(m) => post.with_mean_mode(m),
        None => post,
    };
    let mut predict = cfg.map(|c| c.predict.clone()).unwrap_or_default();
    predict.seed = seed.unwrap_or(predict.seed);
    let target = cfg.map_or("y", |c| c.data.target.as_str());
    predict_table(&post, wck.preprocessing.as_ref(), data, target, predict.samples, predict.seed, out)
}

#[allow(clippy::too_many_arguments)]
pub fn oracle_gp(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    test: &Path,
    out: &Path,
    mode: Option<&str>,
    split: &str,
) -> Result<()> {
    let (ck, w) = load_weights_checkpoint(checkpoint)?;
    let lik = checkpoint_likelihood(&ck, Some(cfg))?;
    let raw = load_labeled(data, &cfg.data.target, &lik, ck.classes.as_deref())?;
    let fit_data = normalize(&select_split(&raw, cfg, split)?, ck.preprocessing.as_ref())?;
    let gp = FullGp::fit(&fit_data, Arc::new(w), lik, cfg.train.prior_precision)?
        .with_mean_mode(parse_mode(mode)?.unwrap_or(cfg.posterior.mean_mode));
    predict_table(
        &gp,
        ck.preprocessing.as_ref(),
        test,
        &cfg.data.target,
        cfg.predict.samples,
        cfg.predict.seed,
        out,
    )
}

#[derive(Serialize)]
struct UpdateTiming {
    update_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    retrain_seconds: Option<f64>,
}

#[derive(Serialize)]
struct UpdateOutput {
    new_points: usize,
    nondeterministic: UpdateTiming,
}

pub struct RetrainArm<'a> {
    pub cfg: &'a RunConfig,
    pub train_data: &'a Path,
}

pub fn update(
    target: &str,
    posterior: &Path,
    data: &Path,
    out: &Path,
    report: &Path,
    retrain: Option<RetrainArm<'_>>,
) -> Result<()> {
    let (ck, wck, post) = load_posterior(posterior)?;
    let lik = *post.likelihood();
    let raw_new = load_labeled(data, target, &lik, wck.classes.as_deref())?;
    let new = normalize(&raw_new, wck.preprocessing.as_ref())?;
    let weights_path = ck.weights_path(posterior);
    let weights_ref = reference_to(&weights_path, out)?;

    let start = Instant::now();
    let updated = post.dual_update(&new)?;
    let update_seconds = start.elapsed().as_secs_f64();
    save_json(out, &PosteriorCheckpoint::new(&updated, &ck.method, &weights_ref))?;

    let retrain_seconds = match retrain {
        Some(arm) => Some(retrain_from_scratch(&arm, &wck, &updated, &new)?),
        None => None,
    };
    save_json(
        report,
        &UpdateOutput {
            new_points: new.len(),
            nondeterministic: UpdateTiming {
                update_seconds,
                retrain_seconds,
            },
        },
    )
}

/// Retrains the network on old plus new data and refits the posterior,
/// returning the wall time of both steps together.
fn retrain_from_scratch(
    arm: &RetrainArm<'_>,
    wck: &WeightsCheckpoint,
    post: &SparsePosterior,
    new: &Dataset,
) -> Result<f64> {
    let cfg = arm.cfg;
    let lik = *post.likelihood();
    let raw = load_labeled(arm.train_data, &cfg.data.target, &lik, wck.classes.as_deref())?;
    let [train, val, _] = partition(&raw, cfg.data.fractions, cfg.data.split_seed)?;
    let norm = wck.preprocessing.as_ref();
    let combined = normalize(&train, norm)?.concat(new)?;
    let val = normalize(&val, norm)?;
    let start = Instant::now();
    let (w, _) = train_map_with_report(&combined, wck.weights()?.spec(), &lik, &cfg.train, &val)?;
    let m = post.inducing().len().min(combined.len());
    let z = sample_inducing(&combined.x, m, post.inducing().seed)?;
    SparsePosterior::fit(&combined, Arc::new(w), lik, post.prior_precision(), z, post.batch())?;
    Ok(start.elapsed().as_secs_f64())
}

#[derive(Serialize)]
struct ClOutput {
    #[serde(flatten)]
    report: ContinuumReport,
    nondeterministic: Timing,
}

pub fn cl(cfg: &RunConfig, data: &Path, out: &Path, buffer_out: Option<&Path>) -> Result<()> {
    let section = cfg
        .cl
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no `cl` section".into()))?;
    if !cfg.likelihood.is_classification() {
        return Err(Error::InvalidConfig("continual learning needs a classification likelihood".into()));
    }
    let raw = load_labeled(data, &cfg.data.target, &cfg.likelihood, None)?;
    let mut parts = Vec::new();
    for task in make_split_tasks(&raw, section.classes_per_task)? {
        parts.push(partition(&task, cfg.data.fractions, cfg.data.split_seed)?);
    }
    let norm = Normalization::fit(&parts[0][0]);
    let tasks = parts
        .iter()
        .map(|[train, val, test]| {
            Ok(TaskData {
                train: norm.apply(train)?,
                val: norm.apply(val)?,
                test: norm.apply(test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = NetworkSpec::new(
        raw.dim(),
        cfg.likelihood.latent_dim(),
        cfg.network.hidden.clone(),
        cfg.network.activation,
    )?;
    if !cfg.network.bias {
        spec = spec.without_bias();
    }
    let start = Instant::now();
    let (report, _, buffer) = run_continuum(&tasks, &spec, &cfg.likelihood, &cfg.cl_config(section))?;
    let wall_seconds = start.elapsed().as_secs_f64();
    if let Some(path) = buffer_out {
        save_json(path, &BufferCheckpoint::new(&buffer))?;
    }
    save_json(
        out,
        &ClOutput {
            report,
            nondeterministic: Timing { wall_seconds },
        },
    )
}

pub enum EvalModel<'a> {
    Posterior(&'a Path),
    Network(&'a Path),
}

#[derive(Serialize)]
struct EvalOutput {
    model: String,
    split: String,
    eval: EvalReport,
}

pub struct EvalArgs<'a> {
    pub cfg: Option<&'a RunConfig>,
    pub model: EvalModel<'a>,
    pub data: &'a Path,
    pub out: &'a Path,
    pub split: &'a str,
    pub ood: Option<&'a Path>,
    pub mode: Option<&'a str>,
    pub seed: Option<u64>,
}

pub fn eval(args: EvalArgs<'_>) -> Result<()> {
    let cfg = args.cfg;
    let target = cfg.map_or("y", |c| c.data.target.as_str());
    let mut predict = cfg.map(|c| c.predict.clone()).unwrap_or_default();
    predict.seed = args.seed.unwrap_or(predict.seed);
    let (model_name, wck, posterior): (String, WeightsCheckpoint, Option<SparsePosterior>) = match args.model {
        EvalModel::Posterior(p) => {
            let (ck, wck, post) = load_posterior(p)?;
            let post = match parse_mode(args.mode)? {
                Some(m) => post.with_mean_mode(m),
                None => post,
            };
            (ck.method, wck, Some(post))
        }
        EvalModel::Network(p) => (String::from("nn_map"), load_weights_checkpoint(p)?.0, None),
    };
    let lik = match &posterior {
        Some(p) => *p.likelihood(),
        None => checkpoint_likelihood(&wck, cfg)?,
    };
    let raw = load_labeled(args.data, target, &lik, wck.classes.as_deref())?;
    let raw = match (args.split, cfg) {
        ("all", _) => raw,
        (split, Some(c)) => select_split(&raw, c, split)?,
        (split, None) => {
            return Err(Error::InvalidConfig(format!("--split {split} needs --config")));
        }
    };
    if raw.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let norm = wck.preprocessing.as_ref();
    let data = normalize(&raw, norm)?;
    let w = wck.weights()?;
    let predictive = |x: &Matrix| -> Result<Vec<RowPredictive>> {
        match &posterior {
            Some(p) => p.predict_y(x, predict.samples, predict.seed),
            None => network_predictive(&w, &lik, x),
        }
    };
    let start = Instant::now();
    let preds = predictive(&data.x)?;
    let shown = match norm {
        Some(n) => to_original_units(&preds, n),
        None => preds.clone(),
    };
    let mut eval = EvalReport::from_predictions(&shown, &raw.y)?;
    if let Some(ood) = args.ood {
        if !lik.is_classification() {
            return Err(Error::InvalidConfig("--ood needs a classification model".into()));
        }
        let (x_ood, _) = load_inputs_csv(ood, target)?;
        let x_ood = match norm {
            Some(n) => n.normalize_x(&x_ood)?,
            None => x_ood,
        };
        let probs = |rows: Vec<RowPredictive>| -> Vec<Vec<f64>> {
            rows.into_iter()
                .filter_map(|r| match r {
                    RowPredictive::Probs(p) => Some(p),
                    RowPredictive::Gaussian { .. } => None,
                })
                .collect()
        };
        eval.auroc = Some(auroc_entropy(&probs(preds), &probs(predictive(&x_ood)?))?);
    }
    eval.nondeterministic = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    save_json(
        args.out,
        &EvalOutput {
            model: model_name,
            split: args.split.to_string(),
            eval,
        },
    )
}
