//! Dense row-major matrices and the norms, decompositions and diagnostics the
//! rest of the crate is built on.
//!
//! Storage is a flat `Vec<f64>` with `data[i * cols + j] = A[i, j]`. Products
//! go through `matrixmultiply`'s blocked kernels; the SVD, the symmetric
//! eigensolver and Cholesky solves are delegated to `faer`.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};
use std::path::Path;

use faer::linalg::solvers::Solve as _;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Relative cutoff for numerical rank: `λᵢ` counts iff `λᵢ > RANK_RTOL · λ₁`.
pub const RANK_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries.
    ///
    /// Rejects empty shapes, a length that does not match `rows * cols`, and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix shape must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(nrows, ncols, data)
    }

    /// Unvalidated constructor for results of internal arithmetic.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix whose entries are `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Entrywise inner product `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Sum of squared entries.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        gemm(self, false, other, false)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        gemm(self, true, other, false)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        gemm(self, false, other, true)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    // ---- norms ----

    /// Absolute L1 norm of every column.
    pub fn col_norms_l1(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v.abs();
            }
        }
        out
    }

    /// Euclidean norm of every column.
    pub fn col_norms_l2(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        out
    }

    /// `|||M|||₁`: maximum absolute column sum.
    pub fn norm_l1_induced(&self) -> f64 {
        self.col_norms_l1().into_iter().fold(0.0, f64::max)
    }

    /// Largest column Euclidean norm (the L2 sensitivity of a query matrix).
    pub fn norm_l2_colmax(&self) -> f64 {
        self.col_norms_l2().into_iter().fold(0.0, f64::max)
    }

    /// `|||M|||∞`: maximum absolute row sum.
    pub fn norm_linf_induced(&self) -> f64 {
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.svd().singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.svd().singular_values.iter().sum()
    }

    // ---- decompositions ----

    /// Thin SVD truncated to the numerical rank.
    pub fn svd(&self) -> SvdSummary {
        let svd = self
            .to_faer()
            .thin_svd()
            .expect("SVD of a finite matrix converges");
        let singular_values: Vec<f64> =
            svd.S().column_vector().iter().map(|s| s.max(0.0)).collect();
        let cutoff = RANK_RTOL * singular_values.first().copied().unwrap_or(0.0);
        let rank = singular_values.iter().take_while(|&&s| s > cutoff).count();
        let (u, v) = (svd.U(), svd.V());
        SvdSummary {
            sigma: singular_values[..rank].to_vec(),
            singular_values,
            rank,
            u: Matrix::from_fn(self.rows, rank, |i, k| u[(i, k)]),
            v: Matrix::from_fn(rank, self.cols, |k, j| v[(j, k)]),
        }
    }

    /// `κ = λ₁ / λ_s` over the nonzero singular values. A zero matrix yields 1.
    pub fn condition_number(&self) -> f64 {
        let s = self.svd();
        match (s.sigma.first(), s.sigma.last()) {
            (Some(&hi), Some(&lo)) => hi / lo,
            _ => 1.0,
        }
    }

    /// `ρ = maxⱼ ‖Vⱼ‖₂` over the columns of the right singular factor.
    /// A zero matrix yields 0.
    pub fn coherence(&self) -> f64 {
        self.svd().coherence()
    }

    /// Moore-Penrose pseudo-inverse, discarding singular values below the rank
    /// cutoff.
    pub fn pseudo_inverse(&self) -> Matrix {
        self.svd().pseudo_inverse()
    }

    /// Eigen-decomposition of a symmetric matrix. Only the lower triangle is
    /// trusted; eigenvalues come back in descending order.
    pub fn symmetric_eigen(&self) -> SymmetricEigen {
        assert_eq!(
            self.rows, self.cols,
            "symmetric_eigen needs a square matrix"
        );
        let n = self.rows;
        let eig = self
            .to_faer()
            .self_adjoint_eigen(Side::Lower)
            .expect("eigendecomposition of a finite matrix converges");
        // faer sorts ascending.
        let (values, vectors) = (eig.S().column_vector(), eig.U());
        SymmetricEigen {
            values: (0..n).rev().map(|k| values[k]).collect(),
            vectors: Matrix::from_fn(n, n, |i, k| vectors[(i, n - 1 - k)]),
        }
    }

    /// Solves `self · X = rhs` for symmetric positive definite `self`.
    pub fn solve_spd(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != self.cols || rhs.rows != self.rows {
            return Err(Error::Dimension(format!(
                "solve_spd: lhs {}x{}, rhs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let chol = self
            .to_faer()
            .llt(Side::Lower)
            .map_err(|_| Error::NotPositiveDefinite("Cholesky factorization failed"))?;
        let out = Matrix::from_faer(chol.solve(rhs.to_faer()).as_ref());
        if !out.is_finite() {
            return Err(Error::NotPositiveDefinite("solution is not finite"));
        }
        Ok(out)
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    fn from_faer(m: MatRef<'_, f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    // ---- text I/O ----

    /// Parses the CSV matrix format: one row per line, comma-separated decimal
    /// literals, no header. Blank lines are ignored.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<Matrix> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    let tok = tok.trim();
                    tok.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| {
                            Error::parse(
                                origin,
                                lineno + 1,
                                format!("not a finite number: {tok:?}"),
                            )
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::parse(
                        origin,
                        lineno + 1,
                        format!("expected {} columns, found {}", first.len(), row.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse(origin, 0, "no rows"));
        }
        Matrix::from_rows(&rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Matrix> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.data.chunks(self.cols) {
            for (j, &v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write_f64(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Writes `v` as the shortest decimal that parses back to the same double.
pub fn write_f64(out: &mut String, v: f64) {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        let _ = write!(out, "{v}");
    } else {
        let _ = write!(out, "{v:e}");
    }
}

pub fn format_f64(v: f64) -> String {
    let mut s = String::new();
    write_f64(&mut s, v);
    s
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if tb {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, kb, "inner dimensions differ: {k} vs {kb}");
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: strides describe exactly the row-major buffers of `a`, `b`
    // (possibly transposed) and the freshly allocated m×n output `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Thin SVD `M = U Σ V` restricted to the `rank` singular values above the
/// rank cutoff.
#[derive(Clone, Debug)]
pub struct SvdSummary {
    /// All singular values, descending (length `min(m, n)`).
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Left factor, `m × rank`, orthonormal columns.
    pub u: Matrix,
    /// Nonzero singular values, the diagonal of Σ.
    pub sigma: Vec<f64>,
    /// Right factor, `rank × n`, orthonormal rows.
    pub v: Matrix,
}

impl SvdSummary {
    pub fn sigma_matrix(&self) -> Matrix {
        Matrix::diag(&self.sigma)
    }

    /// `U Σ V`.
    pub fn reconstruct(&self) -> Matrix {
        self.u_sigma().matmul(&self.v)
    }

    /// `U Σ`.
    pub fn u_sigma(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (k, &s) in self.sigma.iter().enumerate() {
                us[(i, k)] *= s;
            }
        }
        us
    }

    pub fn coherence(&self) -> f64 {
        if self.rank == 0 {
            return 0.0;
        }
        self.v.norm_l2_colmax()
    }

    pub fn pseudo_inverse(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.cols());
        if self.rank == 0 {
            return Matrix::zeros(n, m);
        }
        // Vᵀ Σ⁻¹ Uᵀ
        let mut vt_sinv = self.v.transpose();
        for j in 0..n {
            for (k, &s) in self.sigma.iter().enumerate() {
                vt_sinv[(j, k)] /= s;
            }
        }
        vt_sinv.matmul_nt(&self.u)
    }
}

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, in the order of `values`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `Σₖ f(λₖ) vₖ vₖᵀ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.vectors.rows();
        let mut scaled = self.vectors.clone();
        for k in 0..n {
            let s = f(self.values[k]);
            for i in 0..n {
                scaled[(i, k)] *= s;
            }
        }
        let mut out = scaled.matmul_nt(&self.vectors);
        symmetrize(&mut out);
        out
    }
}

/// Replaces `m` with `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
