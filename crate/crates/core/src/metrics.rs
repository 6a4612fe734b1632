//! Predictive quality metrics.

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, Targets};
use crate::error::{dim_err, Error, Result};
use crate::likelihood::RowPredictive;

pub const ECE_BINS: usize = 15;

/// Probabilities of the observed class are floored here inside the NLPD.
pub const PROB_FLOOR: f64 = 1e-300;

/// Probabilities are floored here inside the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean negative log predictive density and the number of rows whose
/// probability had to be floored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nlpd {
    pub value: f64,
    pub floored: usize,
}

fn check_len(preds: &[RowPredictive], targets: &Targets) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(dim_err(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidConfig("no predictions to evaluate".into()));
    }
    Ok(())
}

fn class_targets(targets: &Targets) -> Result<&[usize]> {
    targets
        .classes()
        .ok_or_else(|| Error::InvalidTarget("metric needs class targets".into()))
}

fn prob_row(p: &RowPredictive) -> Result<&[f64]> {
    match p {
        RowPredictive::Probs(v) => Ok(v),
        RowPredictive::Gaussian { .. } => Err(Error::InvalidTarget(
            "metric needs class probabilities".into(),
        )),
    }
}

pub fn nlpd_detailed(preds: &[RowPredictive], targets: &Targets) -> Result<Nlpd> {
    check_len(preds, targets)?;
    let mut total = 0.0;
    let mut floored = 0;
    for (i, p) in preds.iter().enumerate() {
        total -= match (p, targets) {
            (RowPredictive::Gaussian { mean, var }, Targets::Real(y)) => {
                let r = y[i] - mean;
                -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
            }
            (RowPredictive::Probs(pr), Targets::Class(y)) => {
                let q = *pr.get(y[i]).ok_or_else(|| {
                    Error::InvalidTarget(format!("class {} outside {} probabilities", y[i], pr.len()))
                })?;
                if q < PROB_FLOOR {
                    floored += 1;
                }
                q.max(PROB_FLOOR).ln()
            }
            _ => {
                return Err(Error::InvalidTarget(
                    "prediction kind does not match target kind".into(),
                ))
            }
        };
    }
    let value = total / preds.len() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("nlpd".into()));
    }
    Ok(Nlpd { value, floored })
}

pub fn nlpd(preds: &[RowPredictive], targets: &Targets) -> Result<f64> {
    Ok(nlpd_detailed(preds, targets)?.value)
}

/// Maps Gaussian predictions made in standardized target units back to the
/// original units (`mean·s + μ`, `var·s²`). Probability rows pass through.
pub fn to_original_units(preds: &[RowPredictive], norm: &Normalization) -> Vec<RowPredictive> {
    let s = norm.y_scale();
    preds
        .iter()
        .map(|p| match p {
            RowPredictive::Gaussian { mean, var } => RowPredictive::Gaussian {
                mean: norm.denormalize_y(*mean),
                var: var * s * s,
            },
            other => other.clone(),
        })
        .collect()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &[RowPredictive], targets: &Targets) -> Result<f64> {
    check_len(preds, targets)?;
    let y = class_targets(targets)?;
    let mut hits = 0usize;
    for (p, &t) in preds.iter().zip(y) {
        if argmax(prob_row(p)?) == t {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Top-label expected calibration error with `bins` equal-width bins.
pub fn ece(preds: &[RowPredictive], targets: &Targets, bins: usize) -> Result<f64> {
    check_len(preds, targets)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("ece needs at least one bin".into()));
    }
    let y = class_targets(targets)?;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0.0; bins];
    for (p, &t) in preds.iter().zip(y) {
        let row = prob_row(p)?;
        let k = argmax(row);
        let conf = row[k];
        let b = ((conf * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        if k == t {
            hit_sum[b] += 1.0;
        }
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let c = count[b] as f64;
            total += (c / n) * (hit_sum[b] / c - conf_sum[b] / c).abs();
        }
    }
    Ok(total)
}

/// Shannon entropy in nats.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter()
        .map(|&p| {
            let q = p.max(ENTROPY_FLOOR);
            q * q.ln()
        })
        .sum::<f64>()
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::InvalidConfig("auroc needs both score sets".into()));
    }
    if negatives.iter().chain(positives).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("auroc score".into()));
    }
    let mut all: Vec<(f64, bool)> = negatives
        .iter()
        .map(|&s| (s, false))
        .chain(positives.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUROC for telling out-of-distribution rows from in-distribution rows by
/// predictive entropy.
pub fn auroc_entropy(probs_id: &[Vec<f64>], probs_ood: &[Vec<f64>]) -> Result<f64> {
    let id: Vec<f64> = probs_id.iter().map(|r| entropy(r)).collect();
    let ood: Vec<f64> = probs_ood.iter().map(|r| entropy(r)).collect();
    auroc(&id, &ood)
}

/// Wall-clock measurements; never part of reproducibility comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub nlpd: f64,
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub ece_bins: usize,
    pub auroc: Option<f64>,
    /// Rows whose observed-class probability was floored inside the NLPD.
    pub floored_probabilities: usize,
    pub nondeterministic: Timing,
}

impl EvalReport {
    pub fn from_predictions(preds: &[RowPredictive], targets: &Targets) -> Result<Self> {
        let n = nlpd_detailed(preds, targets)?;
        let (accuracy, ece) = match targets {
            Targets::Class(_) => (Some(accuracy(preds, targets)?), Some(ece(preds, targets, ECE_BINS)?)),
            Targets::Real(_) => (None, None),
        };
        Ok(Self {
            n: preds.len(),
            nlpd: n.value,
            accuracy,
            ece,
            ece_bins: ECE_BINS,
            auroc: None,
            floored_probabilities: n.floored,
            nondeterministic: Timing::default(),
        })
    }
}
