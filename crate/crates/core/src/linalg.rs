//! Dense double-precision linear algebra: a row-major [`Matrix`], Cholesky
//! factorization with an adaptive jitter schedule, and triangular solves.
//!
//! Everything here is a pure function of its inputs. Matrices in this crate
//! are small (at most a few thousand rows), so storage is always dense.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Maximum relative asymmetry accepted by [`cholesky_jittered`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Jitter may grow up to this fraction of the mean diagonal.
pub const JITTER_CEILING: f64 = 1e-2;

/// Relative scale of the first non-zero jitter, as a fraction of the mean diagonal.
pub const DEFAULT_JITTER_SCALE: f64 = 1e-8;

/// Row-major dense matrix of `f64`. Serializes as a list of rows.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(format!(
                "buffer of length {} cannot be shaped {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices, rejecting ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim_err(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Like [`Matrix::from_rows`] but also rejects NaN/Inf entries.
    pub fn from_rows_finite<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = Self::from_rows(rows)?;
        if !m.is_finite() {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(m)
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(dim_err(format!(
                "vstack of {} and {} columns",
                self.cols, other.cols
            )));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, computed row-against-row so every entry is a plain
    /// sequential dot product.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(dim_err(format!(
                "A·Bᵀ with {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(dim_err(format!(
                "matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err(format!(
                "add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err(format!(
                "sub {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.rows.min(self.cols);
        if n == 0 {
            0.0
        } else {
            self.trace() / n as f64
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `max |A_ij − A_ji| / max |A_ij|`; zero for the zero matrix.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Replaces `A` by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter().take(8) {
            writeln!(f, "  {r:?}")?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Sequential dot product. The summation order is fixed (left to right) so
/// that results are reproducible bit-for-bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Lower Cholesky factor of `A + jitter_used·I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
    jitter_used: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// `L·Lᵀ`, i.e. the jittered input.
    pub fn reconstruct(&self) -> Matrix {
        self.lower
            .matmul_transposed(&self.lower)
            .expect("square factor")
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_substitute(&self, y: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(y.len(), n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[(k, i)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
    }

    /// Solves `(L Lᵀ) x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(dim_err(format!(
                "solve with factor of dim {} and rhs of length {}",
                self.dim(),
                b.len()
            )));
        }
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        Ok(x)
    }

    /// `‖L⁻¹ b‖²`, which equals `bᵀ (L Lᵀ)⁻¹ b`.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward_substitute(&mut y);
        dot(&y, &y)
    }
}

/// Default starting jitter for `a`: a tiny fraction of its mean diagonal.
pub fn default_jitter(a: &Matrix) -> f64 {
    DEFAULT_JITTER_SCALE * a.mean_diagonal().abs()
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let ajj = a[(j, j)] + jitter;
        let lj = l.row(j);
        let d = ajj - dot(&lj[..j], &lj[..j]);
        // A pivot this small relative to its diagonal carries no information.
        if !(d.is_finite() && d > 0.0 && d > f64::EPSILON * ajj.abs()) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = {
                let (li, lj) = (l.row(i), l.row(j));
                dot(&li[..j], &lj[..j])
            };
            l[(i, j)] = (a[(i, j)] - s) / djj;
        }
    }
    Some(l)
}

/// Factors `A + jI` with the smallest `j` in `{0, base, 10·base, …}` that
/// succeeds. Fails once `j` would exceed `1e-2 · mean(diag(A))`.
pub fn cholesky_jittered(a: &Matrix, base_jitter: f64) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("cholesky input".into()));
    }
    let asym = a.relative_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    if let Some(lower) = try_cholesky(a, 0.0) {
        return Ok(CholeskyFactor {
            lower,
            jitter_used: 0.0,
        });
    }
    let limit = JITTER_CEILING * a.mean_diagonal().abs();
    let mut jitter = if base_jitter > 0.0 {
        base_jitter
    } else {
        default_jitter(a)
    };
    let mut last = 0.0;
    while jitter > 0.0 && jitter <= limit {
        if let Some(lower) = try_cholesky(a, jitter) {
            return Ok(CholeskyFactor {
                lower,
                jitter_used: jitter,
            });
        }
        last = jitter;
        jitter *= 10.0;
    }
    Err(Error::JitterExhausted {
        last_jitter: last,
        limit,
    })
}

/// Solves `(L Lᵀ) X = B` column by column.
pub fn solve_posdef(factor: &CholeskyFactor, b: &Matrix) -> Result<Matrix> {
    if b.rows != factor.dim() {
        return Err(dim_err(format!(
            "factor has dim {} but rhs has {} rows",
            factor.dim(),
            b.rows
        )));
    }
    let mut out = Matrix::zeros(b.rows, b.cols);
    for j in 0..b.cols {
        let x = factor.solve_vec(&b.col(j))?;
        for (i, v) in x.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Factorization of a Gram matrix `A = G·Gᵀ` computed from the rows of `G`
/// rather than from `A`, so the condition number is not squared.
///
/// The rows `[gₖ, √j·eₖ]` are orthonormalized (Gram–Schmidt, two passes),
/// giving `A + jI = L·Lᵀ` with `L = Rᵀ`, and `L⁻¹·G·v = Q·v` for every
/// vector `v`, where `Q` holds the first `G.cols()` entries of each
/// orthonormal row. The jitter follows the [`cholesky_jittered`] schedule
/// with the pivot rule relaxed to [`GRAM_ROOT_PIVOT`].
#[derive(Clone, Debug, PartialEq)]
pub struct GramRoot {
    q: Matrix,
    factor: CholeskyFactor,
}

impl GramRoot {
    /// `M × P` projection; `q·v` equals `L⁻¹ G v`.
    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter_used
    }
}

/// Smallest accepted squared pivot relative to its row's squared norm. The
/// orthogonal route resolves pivots far below what a Cholesky of the Gram
/// matrix can, so the threshold is much lower than machine epsilon.
pub const GRAM_ROOT_PIVOT: f64 = 1e-20;

pub fn gram_root_jittered(g: &Matrix, base_jitter: f64) -> Result<GramRoot> {
    if !g.is_finite() {
        return Err(Error::NonFinite("gram root input".into()));
    }
    let norms: Vec<f64> = g.row_iter().map(|r| dot(r, r)).collect();
    let mean_diag = if norms.is_empty() {
        0.0
    } else {
        norms.iter().sum::<f64>() / norms.len() as f64
    };
    if let Some(root) = try_gram_root(g, &norms, 0.0) {
        return Ok(root);
    }
    let limit = JITTER_CEILING * mean_diag;
    let mut jitter = if base_jitter > 0.0 {
        base_jitter
    } else {
        DEFAULT_JITTER_SCALE * mean_diag
    };
    let mut last = 0.0;
    while jitter > 0.0 && jitter <= limit {
        if let Some(root) = try_gram_root(g, &norms, jitter) {
            return Ok(root);
        }
        last = jitter;
        jitter *= 10.0;
    }
    Err(Error::JitterExhausted {
        last_jitter: last,
        limit,
    })
}

fn try_gram_root(g: &Matrix, norms: &[f64], jitter: f64) -> Option<GramRoot> {
    let (m, p) = (g.rows, g.cols);
    let width = p + m;
    let sj = jitter.sqrt();
    let mut q = Matrix::zeros(m, width);
    let mut lower = Matrix::zeros(m, m);
    let mut v = vec![0.0; width];
    for k in 0..m {
        v[..p].copy_from_slice(g.row(k));
        v[p..].iter_mut().for_each(|x| *x = 0.0);
        v[p + k] = sj;
        for _pass in 0..2 {
            for l in 0..k {
                let ql = q.row(l);
                let h = dot(ql, &v);
                for (vi, &qi) in v.iter_mut().zip(ql) {
                    *vi -= h * qi;
                }
                lower[(k, l)] += h;
            }
        }
        let d = dot(&v, &v);
        let ajj = norms[k] + jitter;
        if !(d.is_finite() && d > GRAM_ROOT_PIVOT * ajj) {
            return None;
        }
        let r = d.sqrt();
        lower[(k, k)] = r;
        for (qi, &vi) in q.row_mut(k).iter_mut().zip(&v) {
            *qi = vi / r;
        }
    }
    let mut top = Matrix::zeros(m, p);
    for k in 0..m {
        top.row_mut(k).copy_from_slice(&q.row(k)[..p]);
    }
    Some(GramRoot {
        q: top,
        factor: CholeskyFactor {
            lower,
            jitter_used: jitter,
        },
    })
}

impl CholeskyFactor {
    /// Wraps an existing lower-triangular factor with positive diagonal.
    pub fn from_lower(lower: Matrix, jitter_used: f64) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::NotSquare {
                rows: lower.rows,
                cols: lower.cols,
            });
        }
        let n = lower.rows;
        for i in 0..n {
            if !(lower[(i, i)] > 0.0) || lower.row(i)[i + 1..].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidConfig("factor must be lower triangular with positive diagonal".into()));
            }
        }
        Ok(Self { lower, jitter_used })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        a.sub(b).unwrap().max_abs() <= tol
    }

    #[test]
    fn identity_needs_no_jitter() {
        let f = cholesky_jittered(&Matrix::identity(2), 1e-8).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(2));
        assert_eq!(f.jitter_used(), 0.0);
    }

    #[test]
    fn hand_factored_two_by_two() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky_jittered(&a, 1e-8).unwrap();
        let expected = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]).unwrap();
        assert!(close(f.lower(), &expected, 1e-15));
        assert_eq!(f.jitter_used(), 0.0);
    }

    #[test]
    fn singular_matrix_forces_jitter() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let f = cholesky_jittered(&a, 1e-8).unwrap();
        assert!(f.jitter_used() > 0.0);
        let mut aj = a.clone();
        aj.add_diagonal(f.jitter_used());
        assert!(close(&f.reconstruct(), &aj, 1e-12));
    }

    #[test]
    fn indefinite_matrix_exhausts_jitter() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!(matches!(
            cholesky_jittered(&a, 1e-8),
            Err(Error::JitterExhausted { .. })
        ));
    }

    #[test]
    fn shape_and_symmetry_errors() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(
            cholesky_jittered(&rect, 1e-8),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        let asym = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]).unwrap();
        assert!(matches!(
            cholesky_jittered(&asym, 1e-8),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn solve_examples() {
        let f = cholesky_jittered(&Matrix::identity(3), 1e-8).unwrap();
        let x = solve_posdef(&f, &Matrix::identity(3)).unwrap();
        assert!(close(&x, &Matrix::identity(3), 1e-15));

        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let f = cholesky_jittered(&a, 1e-8).unwrap();
        let x = solve_posdef(&f, &a).unwrap();
        assert!(close(&x, &Matrix::identity(2), 1e-14));

        let d = Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let f = cholesky_jittered(&d, 1e-8).unwrap();
        let b = Matrix::from_rows(&[[2.0], [4.0]]).unwrap();
        let x = solve_posdef(&f, &b).unwrap();
        assert!(close(&x, &Matrix::from_rows(&[[1.0], [2.0]]).unwrap(), 1e-15));
    }

    #[test]
    fn solve_rejects_wrong_rows() {
        let f = cholesky_jittered(&Matrix::identity(3), 1e-8).unwrap();
        assert!(matches!(
            solve_posdef(&f, &Matrix::zeros(2, 1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gram_root_matches_cholesky_of_gram() {
        let g = Matrix::from_rows(&[[1.0, 2.0, 0.5, -1.0], [0.3, -0.7, 2.0, 1.0], [1.1, 1.9, 0.4, -0.8]]).unwrap();
        let a = g.matmul_transposed(&g).unwrap();
        let root = gram_root_jittered(&g, 0.0).unwrap();
        let chol = cholesky_jittered(&a, 0.0).unwrap();
        assert_eq!(root.jitter_used(), 0.0);
        assert!(close(root.factor().lower(), chol.lower(), 1e-12));
        let v = [0.2, -1.0, 0.7, 3.0];
        let mut lhs = g.matvec(&v).unwrap();
        root.factor().forward_substitute(&mut lhs);
        let rhs = root.q().matvec(&v).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gram_root_jitters_duplicate_rows() {
        let g = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let root = gram_root_jittered(&g, 0.0).unwrap();
        assert!(root.jitter_used() > 0.0);
        let mut a = g.matmul_transposed(&g).unwrap();
        a.add_diagonal(root.jitter_used());
        assert!(close(&root.factor().reconstruct(), &a, 1e-12));
    }

    #[test]
    fn matmul_transposed_matches_matmul() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let via_t = a.matmul(&b.transpose()).unwrap();
        assert_eq!(a.matmul_transposed(&b).unwrap(), via_t);
    }
}
