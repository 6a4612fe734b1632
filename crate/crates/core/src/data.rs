//! Datasets, CSV ingestion, seeded splits with train-fitted standardization,
//! and the synthetic generators used throughout the test suites.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::likelihood::Target;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Target {
        match self {
            Targets::Real(v) => Target::Real(v[i]),
            Targets::Class(v) => Target::Class(v[i]),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        match self {
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
            Targets::Class(v) => Targets::Class(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    fn concat(&self, other: &Targets) -> Result<Self> {
        match (self, other) {
            (Targets::Real(a), Targets::Real(b)) => Ok(Targets::Real([a.as_slice(), b].concat())),
            (Targets::Class(a), Targets::Class(b)) => Ok(Targets::Class([a.as_slice(), b].concat())),
            _ => Err(Error::InvalidTarget("cannot mix regression and class targets".into())),
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Targets::Class(v) => Some(v),
            Targets::Real(_) => None,
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match self {
            Targets::Real(v) => Some(v),
            Targets::Class(_) => None,
        }
    }
}

/// Per-feature standardization fitted on a training split. Regression targets
/// carry their own mean/std so predictions can be reported in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_std: Option<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

impl Normalization {
    /// Fits statistics on `raw` (which must not be normalized already).
    pub fn fit(raw: &Dataset) -> Self {
        let d = raw.dim();
        let mut x_mean = Vec::with_capacity(d);
        let mut x_std = Vec::with_capacity(d);
        for j in 0..d {
            let (m, s) = mean_std((0..raw.len()).map(|i| raw.x[(i, j)]));
            x_mean.push(m);
            x_std.push(s);
        }
        let (y_mean, y_std) = match &raw.y {
            Targets::Real(v) => {
                let (m, s) = mean_std(v.iter().copied());
                (Some(m), Some(s))
            }
            Targets::Class(_) => (None, None),
        };
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn normalize_x(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize_x(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.x_std[j] + self.x_mean[j];
            }
        }
        Ok(out)
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.rows() > 0 && x.cols() != self.x_mean.len() {
            return Err(dim_err(format!(
                "normalization fitted on {} features, data has {}",
                self.x_mean.len(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn y_stats(&self) -> (f64, f64) {
        (self.y_mean.unwrap_or(0.0), self.y_std.unwrap_or(1.0))
    }

    /// Maps a standardized regression value back to original units.
    pub fn denormalize_y(&self, y: f64) -> f64 {
        let (m, s) = self.y_stats();
        y * s + m
    }

    /// Scale factor from standardized to original target units.
    pub fn y_scale(&self) -> f64 {
        self.y_stats().1
    }

    /// Returns a copy of `raw` expressed in these units.
    pub fn apply(&self, raw: &Dataset) -> Result<Dataset> {
        let x = self.normalize_x(&raw.x)?;
        let y = match &raw.y {
            Targets::Real(v) => {
                let (m, s) = self.y_stats();
                Targets::Real(v.iter().map(|y| (y - m) / s).collect())
            }
            Targets::Class(v) => Targets::Class(v.clone()),
        };
        Ok(Dataset {
            x,
            y,
            feature_names: raw.feature_names.clone(),
            class_names: raw.class_names.clone(),
            normalization: Some(self.clone()),
        })
    }

    /// Inverse of [`Normalization::apply`].
    pub fn revert(&self, normalized: &Dataset) -> Result<Dataset> {
        let x = self.denormalize_x(&normalized.x)?;
        let y = match &normalized.y {
            Targets::Real(v) => Targets::Real(v.iter().map(|&y| self.denormalize_y(y)).collect()),
            Targets::Class(v) => Targets::Class(v.clone()),
        };
        Ok(Dataset {
            x,
            y,
            feature_names: normalized.feature_names.clone(),
            class_names: normalized.class_names.clone(),
            normalization: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Targets,
    pub feature_names: Option<Vec<String>>,
    pub class_names: Option<Vec<String>>,
    /// Set when `x` (and regression `y`) are expressed in standardized units.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Targets) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(dim_err(format!(
                "{} input rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names: None,
            class_names: None,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn target(&self, i: usize) -> Target {
        self.y.get(i)
    }

    /// Largest class index plus one (0 for regression).
    pub fn num_classes(&self) -> usize {
        self.y
            .classes()
            .map_or(0, |c| c.iter().max().map_or(0, |m| m + 1))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: self.y.select(indices),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.normalization != other.normalization {
            return Err(Error::InvalidConfig(
                "cannot concatenate datasets with different normalization".into(),
            ));
        }
        Ok(Self {
            x: self.x.vstack(&other.x)?,
            y: self.y.concat(&other.y)?,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        })
    }
}

/// Reads a headered CSV. Classification labels become contiguous indices in
/// first-appearance order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, task: TaskKind) -> Result<Dataset> {
    load_csv_with_classes(path, target_column, task, None)
}

/// Like [`load_csv`], but labels are looked up in `known_classes` first;
/// unseen labels are appended after them.
pub fn load_csv_with_classes(
    path: impl AsRef<Path>,
    target_column: &str,
    task: TaskKind,
    known_classes: Option<&[String]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let target_idx = headers
        .iter()
        .position(|h| h.trim() == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let mut class_names: Vec<String> = known_classes.map(<[String]>::to_vec).unwrap_or_default();
    let mut class_lookup: HashMap<String, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();

    let mut xs = Vec::new();
    let mut reals = Vec::new();
    let mut classes = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                col: record.len().min(headers.len()),
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == target_idx {
                match task {
                    TaskKind::Regression => reals.push(parse_cell(cell, row, col)?),
                    TaskKind::Classification => {
                        let next = class_lookup.len();
                        let idx = *class_lookup.entry(cell.to_string()).or_insert_with(|| {
                            class_names.push(cell.to_string());
                            next
                        });
                        classes.push(idx);
                    }
                }
            } else {
                xs.push(parse_cell(cell, row, col)?);
            }
        }
        rows += 1;
    }
    let x = Matrix::from_vec(rows, feature_names.len(), xs)?;
    let y = match task {
        TaskKind::Regression => Targets::Real(reals),
        TaskKind::Classification => Targets::Class(classes),
    };
    let mut ds = Dataset::new(x, y)?;
    ds.feature_names = Some(feature_names);
    if task == TaskKind::Classification {
        ds.class_names = Some(class_names);
    }
    Ok(ds)
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Parse {
            row,
            col,
            msg: format!("non-finite value {v}"),
        }),
        Err(e) => Err(Error::Parse {
            row,
            col,
            msg: format!("`{cell}`: {e}"),
        }),
    }
}

/// Writes a dataset (in whatever units it currently holds) as CSV.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, target_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names: Vec<String> = data
        .feature_names
        .clone()
        .unwrap_or_else(|| (0..data.dim()).map(|j| format!("x{j}")).collect());
    let mut header = names;
    header.push(target_column.to_string());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(match data.target(i) {
            Target::Real(v) => v.to_string(),
            Target::Class(k) => data
                .class_names
                .as_ref()
                .and_then(|n| n.get(k).cloned())
                .unwrap_or_else(|| k.to_string()),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every column except `exclude` (when present) as an input feature.
pub fn load_inputs_csv(path: impl AsRef<Path>, exclude: &str) -> Result<(Matrix, Vec<String>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let keep: Vec<usize> = (0..headers.len()).filter(|&j| headers[j].trim() != exclude).collect();
    let names = keep.iter().map(|&j| headers[j].trim().to_string()).collect();
    let mut xs = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: r + 1,
                col: record.len().min(headers.len()),
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for &j in &keep {
            xs.push(parse_cell(record[j].trim(), r + 1, j)?);
        }
        rows += 1;
    }
    Ok((Matrix::from_vec(rows, keep.len(), xs)?, names))
}

impl Dataset {
    /// Renumbers class labels in sorted label order (numerically when every
    /// label parses as a number), so `"0"`/`"1"` files map to classes 0/1
    /// regardless of which label appears first.
    pub fn with_sorted_classes(mut self) -> Self {
        let (Targets::Class(labels), Some(names)) = (&self.y, &self.class_names) else {
            return self;
        };
        let mut order: Vec<usize> = (0..names.len()).collect();
        let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
        match &numeric {
            Some(v) => order.sort_by(|&a, &b| v[a].total_cmp(&v[b])),
            None => order.sort_by(|&a, &b| names[a].cmp(&names[b])),
        }
        let mut remap = vec![0; names.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let labels = labels.iter().map(|&k| remap[k]).collect();
        let names = order.iter().map(|&k| names[k].clone()).collect();
        self.y = Targets::Class(labels);
        self.class_names = Some(names);
        self
    }
}

/// Seeded Fisher–Yates permutation of `0..n`; the first `k` entries of a
/// length-`n` permutation do not depend on how many further swaps follow.
pub fn seeded_permutation(n: usize, take: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..take.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(take.min(n));
    idx
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(f));
    }
    Ok(())
}

/// Seeded shuffle then contiguous partition into three raw datasets.
/// Sizes: `floor(N·f_train)`, `floor(N·f_val)`, remainder.
pub fn partition(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    check_fractions(fractions)?;
    let n = data.len();
    let perm = seeded_permutation(n, n, seed);
    let n_train = ((n as f64) * fractions[0] + 1e-9).floor() as usize;
    let n_val = (((n as f64) * fractions[1] + 1e-9).floor() as usize).min(n - n_train);
    Ok([
        data.select(&perm[..n_train]),
        data.select(&perm[n_train..n_train + n_val]),
        data.select(&perm[n_train + n_val..]),
    ])
}

/// Train/validation/test split of raw data. Standardization statistics are
/// fitted on the training part and applied to all three.
pub fn split(data: &Dataset, fractions: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    let [train, val, test] = partition(data, fractions, seed)?;
    let norm = Normalization::fit(&train);
    Ok([norm.apply(&train)?, norm.apply(&val)?, norm.apply(&test)?])
}

/// Index of the feature with the most distinct values (ties → lowest index).
pub fn most_unique_feature(x: &Matrix) -> usize {
    let mut best = (0, 0);
    for j in 0..x.cols() {
        let mut col = x.col(j);
        col.sort_by(f64::total_cmp);
        col.dedup();
        if col.len() > best.1 {
            best = (j, col.len());
        }
    }
    best.0
}

/// Orders rows along the most-unique feature and cuts the ordering in half:
/// the lower half is in-distribution, the upper half out-of-distribution.
pub fn ordered_split_for_update(data: &Dataset) -> (Dataset, Dataset) {
    let feature = most_unique_feature(&data.x);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.x[(a, feature)].total_cmp(&data.x[(b, feature)]));
    let half = data.len() / 2;
    (data.select(&order[..half]), data.select(&order[half..]))
}

/// The four datasets of the new-data protocol, standardized with statistics of
/// the in-distribution training part.
#[derive(Debug, Clone)]
pub struct UpdateSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub update: Dataset,
    pub test: Dataset,
}

/// In-distribution half split 70/30 train/val; out-of-distribution half split
/// 70/30 update/test.
pub fn update_protocol_splits(data: &Dataset, seed: u64) -> Result<UpdateSplits> {
    let (d1, d2) = ordered_split_for_update(data);
    let [train, val, _] = partition(&d1, [0.7, 0.3, 0.0], seed)?;
    let [update, test, _] = partition(&d2, [0.7, 0.3, 0.0], seed.wrapping_add(1))?;
    let norm = Normalization::fit(&train);
    Ok(UpdateSplits {
        train: norm.apply(&train)?,
        val: norm.apply(&val)?,
        update: norm.apply(&update)?,
        test: norm.apply(&test)?,
    })
}

/// Inputs of the sine fixture exclude this region, kept back as new data.
pub const SINE_GAP: (f64, f64) = (1.5, 3.0);
pub const SINE_RANGE: (f64, f64) = (-3.0, 3.0);

/// `y = sin(3x) + ε` with `x` uniform on `[lo, hi)`.
pub fn make_sine_in(n: usize, lo: f64, hi: f64, noise_std: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(lo..hi);
        let e: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push((3.0 * x).sin() + noise_std * e);
    }
    let mut ds = Dataset::new(Matrix::column(&xs), Targets::Real(ys)).expect("consistent lengths");
    ds.feature_names = Some(vec!["x".into()]);
    ds
}

/// Sine fixture on `[-3, 3]` minus the held-out gap `[1.5, 3]`.
pub fn make_sine(n: usize, noise_std: f64, seed: u64) -> Dataset {
    make_sine_in(n, SINE_RANGE.0, SINE_GAP.0, noise_std, seed)
}

/// New-data counterpart of [`make_sine`], drawn only from the gap.
pub fn make_sine_gap(n: usize, noise_std: f64, seed: u64) -> Dataset {
    make_sine_in(n, SINE_GAP.0, SINE_GAP.1, noise_std, seed)
}

/// Two interleaved crescents in 2D with labels 0/1, balanced within one.
pub fn make_banana(n: usize, seed: u64) -> Dataset {
    make_banana_with_noise(n, 0.2, seed)
}

pub fn make_banana_with_noise(n: usize, noise_std: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t: f64 = rng.random_range(0.0..PI);
        let (cx, cy) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        rows.push([cx + noise_std * ex, cy + noise_std * ey]);
        labels.push(class);
    }
    let mut ds = Dataset::new(Matrix::from_rows(&rows).expect("2 columns"), Targets::Class(labels))
        .expect("consistent lengths");
    ds.feature_names = Some(vec!["x0".into(), "x1".into()]);
    ds
}

/// Isotropic Gaussian blobs, `n_per_class` points around each center; class
/// `k` belongs to `centers[k]`. Rows are interleaved by class.
pub fn make_blobs(n_per_class: usize, centers: &[Vec<f64>], std: f64, seed: u64) -> Result<Dataset> {
    let d = centers.first().map_or(0, Vec::len);
    if centers.iter().any(|c| c.len() != d) {
        return Err(dim_err("blob centers of different dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_per_class * centers.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for _ in 0..n_per_class {
        for (k, c) in centers.iter().enumerate() {
            let row: Vec<f64> = c
                .iter()
                .map(|m| {
                    let e: f64 = rng.sample(StandardNormal);
                    m + std * e
                })
                .collect();
            rows.push(row);
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_rows(&rows)?, Targets::Class(labels))
}

/// Partitions a labeled dataset into tasks of consecutive, disjoint class
/// groups: `{0..k}`, `{k..2k}`, … Class indices are left untouched.
pub fn make_split_tasks(base: &Dataset, classes_per_task: usize) -> Result<Vec<Dataset>> {
    let labels = base
        .y
        .classes()
        .ok_or_else(|| Error::InvalidTarget("task split needs class labels".into()))?;
    if classes_per_task == 0 {
        return Err(Error::InvalidConfig("classes_per_task must be at least 1".into()));
    }
    let n_classes = base.num_classes();
    let n_tasks = n_classes.div_ceil(classes_per_task);
    Ok((0..n_tasks)
        .map(|t| {
            let range = t * classes_per_task..((t + 1) * classes_per_task).min(n_classes);
            let idx: Vec<usize> = (0..base.len()).filter(|&i| range.contains(&labels[i])).collect();
            base.select(&idx)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_classes_follow_numeric_label_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "a,y\n1,10\n2,2\n3,10\n").unwrap();
        let d = load_csv(&p, "y", TaskKind::Classification).unwrap().with_sorted_classes();
        assert_eq!(d.y, Targets::Class(vec![1, 0, 1]));
        assert_eq!(d.class_names, Some(vec!["2".to_string(), "10".to_string()]));
        let (x, names) = load_inputs_csv(&p, "y").unwrap();
        assert_eq!(x, Matrix::column(&[1.0, 2.0, 3.0]));
        assert_eq!(names, vec!["a"]);
        let (x, _) = load_inputs_csv(&p, "none").unwrap();
        assert_eq!(x.cols(), 2);
    }
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_regression_csv() {
        let f = write_tmp("x,y\n1,2\n3,4\n");
        let ds = load_csv(f.path(), "y", TaskKind::Regression).unwrap();
        assert_eq!(ds.x, Matrix::from_rows(&[[1.0], [3.0]]).unwrap());
        assert_eq!(ds.y, Targets::Real(vec![2.0, 4.0]));
    }

    #[test]
    fn labels_map_in_first_appearance_order() {
        let f = write_tmp("x,label\n0.1,b\n0.2,a\n0.3,b\n");
        let ds = load_csv(f.path(), "label", TaskKind::Classification).unwrap();
        assert_eq!(ds.y, Targets::Class(vec![0, 1, 0]));
        assert_eq!(ds.class_names.unwrap(), vec!["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn known_classes_take_precedence() {
        let f = write_tmp("x,label\n0.1,a\n0.2,c\n");
        let known = vec!["b".to_string(), "a".to_string()];
        let ds = load_csv_with_classes(f.path(), "label", TaskKind::Classification, Some(&known)).unwrap();
        assert_eq!(ds.y, Targets::Class(vec![1, 2]));
    }

    #[test]
    fn malformed_cell_reports_position() {
        let f = write_tmp("x,y\n1,foo\n");
        match load_csv(f.path(), "y", TaskKind::Regression) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_file() {
        let f = write_tmp("x,y\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "z", TaskKind::Regression),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y", TaskKind::Regression),
            Err(Error::MissingFile(_))
        ));
        let empty = write_tmp("");
        assert!(matches!(
            load_csv(empty.path(), "y", TaskKind::Regression),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn header_only_file_is_an_empty_dataset() {
        let f = write_tmp("x,y\n");
        let ds = load_csv(f.path(), "y", TaskKind::Regression).unwrap();
        assert!(ds.is_empty());
    }

    fn ramp(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(Matrix::column(&xs), Targets::Real(xs.clone())).unwrap()
    }

    #[test]
    fn split_sizes() {
        let [a, b, c] = split(&ramp(100), [0.7, 0.15, 0.15], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        let [a, b, c] = split(&ramp(10), [0.7, 0.15, 0.15], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let data = ramp(37);
        let first = partition(&data, [0.5, 0.25, 0.25], 9).unwrap();
        let second = partition(&data, [0.5, 0.25, 0.25], 9).unwrap();
        assert_eq!(first, second);
        let mut all: Vec<f64> = first.iter().flat_map(|d| d.x.col(0)).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, data.x.col(0));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(matches!(
            split(&ramp(10), [0.5, 0.5, 0.5], 0),
            Err(Error::BadFractions(_))
        ));
    }

    #[test]
    fn split_standardizes_with_train_statistics() {
        let [train, val, _] = split(&ramp(50), [0.6, 0.2, 0.2], 3).unwrap();
        let xs = train.x.col(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert_eq!(train.normalization, val.normalization);
    }

    #[test]
    fn ordered_split_halves() {
        let data = ramp(10);
        let (d1, d2) = ordered_split_for_update(&data);
        assert_eq!(d1.x.col(0), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d2.x.col(0), vec![5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn ordered_split_picks_most_unique_feature() {
        let x = Matrix::from_rows(&[[1.0, 3.0], [1.0, 1.0], [1.0, 2.0], [1.0, 0.0]]).unwrap();
        assert_eq!(most_unique_feature(&x), 1);
        let data = Dataset::new(x, Targets::Real(vec![0.0; 4])).unwrap();
        let (d1, _) = ordered_split_for_update(&data);
        assert_eq!(d1.x.col(1), vec![0.0, 1.0]);
        // Equal unique counts: the first feature wins.
        let tie = Matrix::from_rows(&[[2.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(most_unique_feature(&tie), 0);
    }

    #[test]
    fn sine_without_noise_is_exact() {
        let ds = make_sine(50, 0.0, 1);
        for i in 0..ds.len() {
            let x = ds.x[(i, 0)];
            assert!((SINE_RANGE.0..SINE_GAP.0).contains(&x));
            let Target::Real(y) = ds.target(i) else { unreachable!() };
            assert_eq!(y, (3.0 * x).sin());
        }
    }

    #[test]
    fn banana_is_balanced() {
        for n in [10, 11, 64] {
            let ds = make_banana(n, 2);
            let ones = ds.y.classes().unwrap().iter().filter(|&&c| c == 1).count();
            assert!((2 * ones as i64 - n as i64).abs() <= 1);
        }
    }

    #[test]
    fn split_tasks_group_classes() {
        let centers = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let base = make_blobs(5, &centers, 0.1, 0).unwrap();
        let tasks = make_split_tasks(&base, 2).unwrap();
        assert_eq!(tasks.len(), 2);
        let mut c0: Vec<usize> = tasks[0].y.classes().unwrap().to_vec();
        c0.sort();
        c0.dedup();
        assert_eq!(c0, vec![0, 1]);
        let mut c1: Vec<usize> = tasks[1].y.classes().unwrap().to_vec();
        c1.sort();
        c1.dedup();
        assert_eq!(c1, vec![2, 3]);
    }

    #[test]
    fn permutation_prefix_is_stable() {
        let full = seeded_permutation(20, 20, 5);
        let head = seeded_permutation(20, 3, 5);
        assert_eq!(&full[..3], head.as_slice());
    }

    #[test]
    fn normalization_round_trip() {
        let ds = make_banana(30, 4);
        let norm = Normalization::fit(&ds);
        let back = norm.revert(&norm.apply(&ds).unwrap()).unwrap();
        assert!(back.x.sub(&ds.x).unwrap().max_abs() <= 1e-12);
    }
}
