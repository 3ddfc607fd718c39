//! Small dense linear algebra: row-major matrices and a one-sided Jacobi SVD.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Matrix::new",
                index,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("matrix", "rows have different lengths"));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Matrix::identity(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Mᵀ y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * yr;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.get(r, c);
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                found: vec![other.rows],
            });
        }
        let mut data = vec![0.0; self.rows * other.cols];
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|r| (0..r).all(|c| (self.get(r, c) - self.get(c, r)).abs() <= tol))
    }
}

/// Thin factorization `A V = W` with orthogonal `V` (n×n) and mutually
/// orthogonal columns of `W`; `singular[j] = ‖W[:, j]‖`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Columns of `W = U Σ`, stored column by column.
    scaled_left: Vec<Vec<f64>>,
    /// Columns of `V`.
    right: Vec<Vec<f64>>,
    singular: Vec<f64>,
}

const MAX_SWEEPS: usize = 80;

impl Svd {
    /// One-sided (Hestenes) Jacobi SVD.
    pub fn new(a: &Matrix) -> Result<Self> {
        let (m, n) = (a.rows, a.cols);
        let mut w: Vec<Vec<f64>> = (0..n)
            .map(|c| (0..m).map(|r| a.get(r, c)).collect())
            .collect();
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let mut col = vec![0.0; n];
                col[c] = 1.0;
                col
            })
            .collect();
        let eps = 1e-15;
        // Columns this small are numerically zero and only rotate rounding noise.
        let negligible = 1e-32 * a.data.iter().map(|v| v * v).sum::<f64>();
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha = dot(&w[p], &w[p]);
                    let beta = dot(&w[q], &w[q]);
                    let gamma = dot(&w[p], &w[q]);
                    if alpha <= negligible
                        || beta <= negligible
                        || gamma.abs() <= eps * libm::sqrt(alpha * beta)
                    {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = c * t;
                    rotate(&mut w, p, q, c, s);
                    rotate(&mut v, p, q, c, s);
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
        }
        let singular = w.iter().map(|col| libm::sqrt(dot(col, col))).collect();
        Ok(Svd {
            scaled_left: w,
            right: v,
            singular,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular
    }

    pub fn max_singular(&self) -> f64 {
        self.singular.iter().fold(0.0, |m, &s| m.max(s))
    }

    /// Right singular vector `j`.
    pub fn right_vector(&self, j: usize) -> &[f64] {
        &self.right[j]
    }

    /// `(AᵀA)† Aᵀ y`, discarding singular values below `rel_threshold · σ_max`.
    pub fn pseudo_inverse_apply(&self, y: &[f64], rel_threshold: f64) -> Vec<f64> {
        let n = self.right.len();
        let cut = rel_threshold * self.max_singular();
        let mut x = vec![0.0; n];
        for j in 0..n {
            let s = self.singular[j];
            if s <= cut || s == 0.0 {
                continue;
            }
            let coef = dot(&self.scaled_left[j], y) / (s * s);
            for (xi, &vi) in x.iter_mut().zip(&self.right[j]) {
                *xi += coef * vi;
            }
        }
        x
    }

    /// `V diag(f(σ_j²)) Vᵀ x`, a spectral function of `AᵀA`.
    pub fn gram_function_apply(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (j, vj) in self.right.iter().enumerate() {
            let s = self.singular[j];
            let coef = f(s * s) * dot(vj, x);
            for (o, &vi) in out.iter_mut().zip(vj) {
                *o += coef * vi;
            }
        }
        out
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::invalid("cholesky", "matrix must be square"));
        }
        let n = a.rows;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { iteration: i });
                    }
                    l[i * n + i] = libm::sqrt(s);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, lower: l })
    }

    /// `log det A`
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| libm::log(self.lower[i * self.n + i]))
            .sum::<f64>()
    }

    /// `A⁻¹ b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    /// `L z`, mapping white noise to a draw with covariance `A`.
    pub fn lower_apply(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum())
            .collect()
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}
