//! Dense row-major matrices and the SVD contract used by every other module.
//!
//! All arithmetic is in `f64`. The decomposition is deterministic for a given
//! input: singular values are sorted in descending order and each singular
//! vector pair is sign-fixed so the largest-magnitude entry of `u_i` is
//! positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix with entries stored in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from externally supplied data, rejecting NaN/Inf entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        for (i, &x) in data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    row: i / cols.max(1),
                    col: i % cols.max(1),
                });
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(row, col)` for each entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(self.dim_mismatch(other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(self.dim_mismatch(other));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = &self.data[k * self.cols..(k + 1) * self.cols];
            let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &aki) in a_row.iter().enumerate() {
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += aki * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_tr(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(self.dim_mismatch(other));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let b_row = &other.data[j * other.cols..(j + 1) * other.cols];
                let dot: f64 = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
                out.data[i * other.rows + j] = dot;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    /// `self += s * other`; shapes must match.
    pub fn add_assign_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "shape mismatch in add_assign_scaled"
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in sub");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// New matrix made of the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, indices.len());
        for i in 0..self.rows {
            for (jj, &j) in indices.iter().enumerate() {
                out.data[i * indices.len() + jj] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// New matrix made of the leading `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        let n = n.min(self.cols);
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            out.data[i * n..(i + 1) * n]
                .copy_from_slice(&self.data[i * self.cols..i * self.cols + n]);
        }
        out
    }

    /// New matrix made of the leading `n` rows.
    pub fn leading_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    fn dim_mismatch(&self, other: &Matrix) -> Error {
        Error::DimensionMismatch {
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: other.rows,
            right_cols: other.cols,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Full singular value decomposition `G = U diag(sigma) Vᵀ`.
///
/// `u` is `m x d`, `v` is `n x d` with `d = min(m, n)`; both have orthonormal
/// columns and `sigma` is nonnegative and descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularDecomposition {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SingularDecomposition {
    pub fn rank_dim(&self) -> usize {
        self.sigma.len()
    }

    /// Reconstructs `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.u.rows();
        let n = self.v.rows();
        let d = self.sigma.len();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            for l in 0..d {
                let uil = self.u.get(i, l) * self.sigma[l];
                if uil == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for j in 0..n {
                    out_row[j] += uil * self.v.get(j, l);
                }
            }
        }
        out
    }
}

/// Computes the SVD of `g` with descending singular values and a fixed sign
/// convention: the largest-magnitude entry of each left singular vector is
/// made positive (ties broken by the first occurrence).
///
/// Uses one-sided Jacobi rotations, which keep clustered singular values
/// accurate to machine precision (a QR-based solver can be off by 1e-4 on
/// products of orthonormal bases, which the interval controller feeds in
/// constantly).
pub fn svd(g: &Matrix) -> Result<SingularDecomposition> {
    let (m, n) = g.shape();
    if let Some(pos) = g.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / n.max(1),
            col: pos % n.max(1),
        });
    }
    // Work on the tall orientation so the rotated columns live in the larger
    // space; flip the factors back afterwards.
    let (mut u, mut sigma, mut v) = if m >= n {
        jacobi_svd_tall(g)?
    } else {
        let (u_t, sigma, v_t) = jacobi_svd_tall(&g.transpose())?;
        (v_t, sigma, u_t)
    };

    // Descending order; stable so ties keep solver order.
    let d = sigma.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite"));
    let mut u_sorted = Matrix::zeros(m, d);
    let mut v_sorted = Matrix::zeros(n, d);
    let mut sigma_sorted = Vec::with_capacity(d);
    for (slot, &src) in order.iter().enumerate() {
        sigma_sorted.push(sigma[src]);
        for i in 0..m {
            u_sorted.set(i, slot, u.get(i, src));
        }
        for j in 0..n {
            v_sorted.set(j, slot, v.get(j, src));
        }
    }
    u = u_sorted;
    v = v_sorted;
    sigma = sigma_sorted;

    // Sign convention keyed on the left singular vector.
    for slot in 0..d {
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for i in 0..m {
            let x = u.get(i, slot);
            if x.abs() > max_abs {
                max_abs = x.abs();
                sign = if x < 0.0 { -1.0 } else { 1.0 };
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                u.set(i, slot, -u.get(i, slot));
            }
            for j in 0..n {
                v.set(j, slot, -v.get(j, slot));
            }
        }
    }

    Ok(SingularDecomposition { u, sigma, v })
}

/// One-sided Jacobi on a tall matrix (`m >= n`): rotates column pairs until
/// they are mutually orthogonal, then reads off `sigma` as column norms.
fn jacobi_svd_tall(g: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = g.shape();
    let mut a = g.clone(); // columns evolve into U * diag(sigma)
    let mut v = Matrix::identity(n);

    let col_dot = |a: &Matrix, p: usize, q: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..a.rows() {
            acc += a.get(i, p) * a.get(i, q);
        }
        acc
    };
    let rotate = |mat: &mut Matrix, p: usize, q: usize, cs: f64, sn: f64| {
        for i in 0..mat.rows() {
            let xp = mat.get(i, p);
            let xq = mat.get(i, q);
            mat.set(i, p, cs * xp - sn * xq);
            mat.set(i, q, sn * xp + cs * xq);
        }
    };

    const MAX_SWEEPS: usize = 64;
    let tol = 1e-15;
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let app = col_dot(&a, p, p);
                let aqq = col_dot(&a, q, q);
                let apq = col_dot(&a, p, q);
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, p, q, cs, sn);
                rotate(&mut v, p, q, cs, sn);
                rotated = true;
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNotConverged { rows: m, cols: n });
    }

    let mut sigma = Vec::with_capacity(n);
    let mut u = Matrix::zeros(m, n);
    let mut max_norm: f64 = 0.0;
    let norms: Vec<f64> = (0..n).map(|j| col_dot(&a, j, j).sqrt()).collect();
    for &norm in &norms {
        max_norm = max_norm.max(norm);
    }
    // Columns below the noise floor of the factorization are treated as an
    // exact null space and replaced by an orthonormal completion.
    let floor = max_norm * (m.max(n) as f64) * f64::EPSILON;
    let mut null_slots = Vec::new();
    for j in 0..n {
        if norms[j] > floor && norms[j] > 0.0 {
            sigma.push(norms[j]);
            for i in 0..m {
                u.set(i, j, a.get(i, j) / norms[j]);
            }
        } else {
            sigma.push(0.0);
            null_slots.push(j);
        }
    }
    complete_null_columns(&mut u, &null_slots);
    Ok((u, sigma, v))
}

/// Fills the listed zero columns of `u` with an orthonormal completion, built
/// by Gram-Schmidt over canonical basis vectors.
///
/// If any slot stayed empty after one pass, every rejected candidate would be
/// within `0.5/sqrt(m)` of the filled span, yet the candidates' total squared
/// distance to a proper subspace is at least 1 — so one pass always suffices.
fn complete_null_columns(u: &mut Matrix, slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let (m, n) = u.shape();
    let threshold = 0.5 / (m as f64).sqrt();
    let mut pending = slots.iter().copied();
    let mut slot = pending.next();
    for candidate in 0..m {
        let Some(target) = slot else { break };
        let mut col = vec![0.0; m];
        col[candidate] = 1.0;
        // Two orthogonalization passes for numerical stability.
        for _ in 0..2 {
            for j in 0..n {
                if j == target {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| col[i] * u.get(i, j)).sum();
                if dot != 0.0 {
                    for (i, x) in col.iter_mut().enumerate() {
                        *x -= dot * u.get(i, j);
                    }
                }
            }
        }
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > threshold {
            for (i, x) in col.iter().enumerate() {
                u.set(i, target, x / norm);
            }
            slot = pending.next();
        }
    }
    assert!(slot.is_none(), "orthonormal completion is always possible");
}
