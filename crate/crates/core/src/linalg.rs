//! Dense real matrices and the small-matrix kernels everything else is built on.
//!
//! [`Matrix`] is a plain row-major `f64` buffer. Products go through
//! `matrixmultiply` so transposed operands are handled with strides instead of
//! copies. The SVD here is a one-sided Jacobi sweep: slow compared to LAPACK,
//! but accurate to a few ulps, which is what the polar-factor oracle needs.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest `rows * cols` accepted by [`svd_small`].
pub const SVD_MAX_ENTRIES: usize = 1_000_000;

/// Relative singular-value floor below which a matrix counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{rows}x{cols} matrix exceeds the dense SVD limit of {limit} entries")]
    TooLarge { rows: usize, cols: usize, limit: usize },
    #[error("polar factor needs rows >= cols, got {rows}x{cols}")]
    NotTall { rows: usize, cols: usize },
    #[error("rank deficient: smallest singular value {smallest:e} is below {threshold:e}")]
    RankDeficient { smallest: f64, threshold: f64 },
    #[error("Jacobi SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let row = &self.row(r)[..self.cols.min(8)];
            writeln!(f, "  {row:?}{}", if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Validating constructor: positive shape, matching length, finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols,
                col: idx % cols,
                value: data[idx],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged or empty input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "from_rows: no rows");
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "from_rows: ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("from_rows: invalid matrix")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square diagonal matrix.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Standard normal entries scaled by `std`.
    pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            let z: f64 = rng.sample(StandardNormal);
            *v = std * z;
        }
        m
    }

    /// Assembles a matrix from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = columns[0].len();
        Self::from_fn(rows, cols, |r, c| columns[c][r])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self * other`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        out
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "t_matmul: ({}x{})ᵀ * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        out
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_t: {}x{} * ({}x{})ᵀ",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
        );
        out
    }

    /// `XᵀX` (cols × cols).
    pub fn gram(&self) -> Matrix {
        self.t_matmul(self)
    }

    /// Gram matrix on the smaller dimension: `XᵀX` for tall or square input,
    /// `XXᵀ` for wide input.
    pub fn gram_small(&self) -> Matrix {
        if self.rows >= self.cols {
            self.t_matmul(self)
        } else {
            self.matmul_t(self)
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (acc, v) in sq.iter_mut().zip(self.row(r)) {
                *acc += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// `c = a * b` for strided operands, `c` row-major and zero-initialized.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides describe views that stay inside `a.0`, `b.0` and `c`
    // for the given m, k, n; every caller derives them from the owning shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Frobenius norm, `sqrt(Σ m_ij²)`.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

/// Result of a power-iteration estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// Non-convergence is not an error: the best estimate is returned with
/// `converged == false`.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> SpectralEstimate {
    assert!(tol > 0.0, "spectral_norm: tol must be positive");
    if m.is_zero() {
        return SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    // Fixed, irregular start vector so the iterate is never exactly orthogonal
    // to the dominant right singular vector for structured inputs.
    let n = m.cols();
    let mut v = Matrix::from_fn(n, 1, |i, _| 1.0 + ((i * 7919 + 13) % 101) as f64 / 101.0);
    let norm = v.frobenius_norm();
    v.scale_mut(1.0 / norm);

    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let w = m.matmul(&v);
        let next = w.frobenius_norm_sq();
        let z = m.t_matmul(&w);
        let zn = z.frobenius_norm();
        if zn == 0.0 {
            return SpectralEstimate {
                value: next.sqrt(),
                converged: true,
                iterations: it,
            };
        }
        v = z.scale(1.0 / zn);
        if it > 1 && (next - lambda).abs() <= tol * next {
            return SpectralEstimate {
                value: next.sqrt(),
                converged: true,
                iterations: it,
            };
        }
        lambda = next;
    }
    SpectralEstimate {
        value: lambda.sqrt(),
        converged: false,
        iterations: max_iter,
    }
}

/// Thin SVD `A = U·diag(σ)·Vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.singular_values) {
                *v *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

/// One-sided Jacobi SVD on the taller orientation.
pub fn svd_small(m: &Matrix) -> Result<SvdResult, LinalgError> {
    let (rows, cols) = m.shape();
    if rows * cols > SVD_MAX_ENTRIES {
        return Err(LinalgError::TooLarge {
            rows,
            cols,
            limit: SVD_MAX_ENTRIES,
        });
    }
    if rows >= cols {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn jacobi_tall(m: &Matrix) -> Result<SvdResult, LinalgError> {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON * rows as f64;

    let mut converged = cols == 1;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(i, col)| (dot(col, col).sqrt(), i)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut null_slots = Vec::new();
    for (slot, &(sigma, idx)) in order.iter().enumerate() {
        if sigma > f64::MIN_POSITIVE {
            u_cols.push(a[idx].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            null_slots.push(slot);
        }
    }
    for slot in null_slots {
        let col = orthonormal_completion(&u_cols, slot, rows);
        u_cols[slot] = col;
    }

    let singular_values = order.iter().map(|&(s, _)| s).collect();
    let u = Matrix::from_columns(&u_cols);
    let vt = Matrix::from_fn(cols, cols, |r, c| v[order[r].1][c]);
    Ok(SvdResult { u, singular_values, vt })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Unit vector orthogonal to every nonzero column except `skip`.
fn orthonormal_completion(cols: &[Vec<f64>], skip: usize, dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        // two Gram-Schmidt passes
        for _ in 0..2 {
            for (j, c) in cols.iter().enumerate() {
                if j == skip {
                    continue;
                }
                let proj = dot(&e, c);
                e.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = dot(&e, &e).sqrt();
        if n > best_norm {
            best_norm = n;
            best = e;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

/// Closed-form orthogonal Procrustes solution `W (WᵀW)^{-1/2}`, computed as
/// `U·Vᵀ` from the thin SVD.
pub fn polar_orthogonal_factor_exact(w: &Matrix) -> Result<Matrix, LinalgError> {
    let (rows, cols) = w.shape();
    if rows < cols {
        return Err(LinalgError::NotTall { rows, cols });
    }
    let svd = svd_small(w)?;
    let largest = svd.singular_values[0];
    let smallest = *svd.singular_values.last().expect("nonempty spectrum");
    let threshold = RANK_TOLERANCE * largest;
    if largest == 0.0 || smallest < threshold {
        return Err(LinalgError::RankDeficient { smallest, threshold });
    }
    Ok(svd.u.matmul(&svd.vt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(Matrix::new(0, 3, vec![]), Err(LinalgError::EmptyShape { .. })));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(LinalgError::LengthMismatch { len: 3, .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::identity(2)), 2f64.sqrt());
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 5)), 0.0);
        let m = Matrix::random_gaussian(8, 8, 1.0, &mut rng(7));
        let mut acc = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                acc += m[(r, c)] * m[(r, c)];
            }
        }
        assert!((frobenius_norm(&m) - acc.sqrt()).abs() <= 1e-14 * acc.sqrt());
    }

    #[test]
    fn strided_products_agree_with_explicit_transpose() {
        let a = Matrix::random_gaussian(5, 3, 1.0, &mut rng(1));
        let b = Matrix::random_gaussian(5, 4, 1.0, &mut rng(2));
        let c = Matrix::random_gaussian(6, 3, 1.0, &mut rng(3));
        assert!(a.t_matmul(&b).max_abs_diff(&a.transpose().matmul(&b)) < 1e-14);
        assert!(a.matmul_t(&c).max_abs_diff(&a.matmul(&c.transpose())) < 1e-14);
        assert_eq!(a.gram_small().shape(), (3, 3));
        assert_eq!(a.transpose().gram_small().shape(), (3, 3));
    }

    #[test]
    fn spectral_norm_examples() {
        let est = spectral_norm(&Matrix::from_diag(&[3.0, 1.0]), 1e-14, 1000);
        assert!(est.converged);
        assert!((est.value - 3.0).abs() < 1e-12);

        let q = polar_orthogonal_factor_exact(&Matrix::random_gaussian(5, 3, 1.0, &mut rng(4))).unwrap();
        let est = spectral_norm(&q, 1e-12, 1000);
        assert!((est.value - 1.0).abs() < 1e-10);

        let m = Matrix::random_gaussian(16, 8, 1.0, &mut rng(3));
        let est = spectral_norm(&m, 1e-15, 100_000);
        let sigma = svd_small(&m).unwrap().singular_values[0];
        assert!((est.value - sigma).abs() <= 1e-8 * sigma, "{est:?} vs {sigma}");
    }

    #[test]
    fn spectral_norm_flags_non_convergence() {
        let m = Matrix::random_gaussian(30, 30, 1.0, &mut rng(9));
        let est = spectral_norm(&m, 1e-15, 2);
        assert!(!est.converged);
        assert_eq!(est.iterations, 2);
        assert!(est.value > 0.0);
    }

    #[test]
    fn svd_diag_and_rank_one() {
        let s = svd_small(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(s.singular_values, vec![2.0, 1.0]);
        assert!(s.u.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!(s.vt.max_abs_diff(&Matrix::identity(2)) < 1e-15);

        let u = [0.6, 0.8, 0.0];
        let v = [0.0, 1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0];
        let m = Matrix::from_fn(3, 4, |r, c| u[r] * v[c]);
        let s = svd_small(&m).unwrap();
        assert!((s.singular_values[0] - 1.0).abs() < 1e-14);
        assert!(s.singular_values[1..].iter().all(|x| x.abs() < 1e-14));
        assert!(s.u.gram().max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        let m = Matrix::random_gaussian(6, 4, 1.0, &mut rng(11));
        let s = svd_small(&m).unwrap();
        let resid = s.reconstruct().sub(&m).frobenius_norm();
        assert!(resid <= 1e-10 * m.frobenius_norm());
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.u.gram().max_abs_diff(&Matrix::identity(4)) < 1e-10);
        assert!(s.vt.matmul_t(&s.vt).max_abs_diff(&Matrix::identity(4)) < 1e-10);
    }

    #[test]
    fn svd_of_zero_matrix_has_orthonormal_factors() {
        let s = svd_small(&Matrix::zeros(4, 3)).unwrap();
        assert!(s.singular_values.iter().all(|&x| x == 0.0));
        assert!(s.u.gram().max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn svd_rejects_oversized_input() {
        let m = Matrix::zeros(1001, 1000);
        assert!(matches!(svd_small(&m), Err(LinalgError::TooLarge { .. })));
    }

    #[test]
    fn polar_fixed_points_and_errors() {
        let q = polar_orthogonal_factor_exact(&Matrix::random_gaussian(5, 3, 1.0, &mut rng(5))).unwrap();
        assert!(polar_orthogonal_factor_exact(&q).unwrap().max_abs_diff(&q) < 1e-12);
        let c = Matrix::identity(4).scale(3.7);
        assert!(
            polar_orthogonal_factor_exact(&c)
                .unwrap()
                .max_abs_diff(&Matrix::identity(4))
                < 1e-14
        );
        assert!(matches!(
            polar_orthogonal_factor_exact(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotTall { .. })
        ));
        let singular = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]);
        assert!(matches!(
            polar_orthogonal_factor_exact(&singular),
            Err(LinalgError::RankDeficient { .. })
        ));
    }
}
