use alloc::vec;
use alloc::vec::Vec;

use super::{check_input, EnergyModel};
use crate::error::{Error, Result};
use crate::field::{dot, Field};
use crate::linalg::{Matrix, Svd};

/// Prior covariance `Σ0`, diagonal or dense symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Dense {
        matrix: Matrix,
        eigenvalues: Vec<f64>,
        eigenvectors: Vec<Vec<f64>>,
    },
}

impl Covariance {
    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        Covariance::diagonal(vec![variance; n])
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() || variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "covariance",
                "variances must be finite and >= 0",
            ));
        }
        Ok(Covariance::Diagonal(variances))
    }

    pub fn dense(matrix: Matrix) -> Result<Self> {
        if !matrix.is_symmetric(
            1e-12
                * matrix
                    .as_slice()
                    .iter()
                    .fold(1.0, |m: f64, v| m.max(v.abs())),
        ) {
            return Err(Error::invalid("covariance", "matrix must be symmetric"));
        }
        let svd = Svd::new(&matrix)?;
        let n = matrix.rows();
        let eigenvectors: Vec<Vec<f64>> = (0..n).map(|j| svd.right_vector(j).to_vec()).collect();
        let eigenvalues: Vec<f64> = eigenvectors
            .iter()
            .map(|v| dot(v, &matrix.matvec(v)))
            .collect();
        let scale = eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if let Some(j) = eigenvalues.iter().position(|&l| l < -1e-10 * scale) {
            return Err(Error::NotPositiveDefinite { iteration: j });
        }
        let eigenvalues = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
        Ok(Covariance::Dense {
            matrix,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Dense { matrix, .. } => matrix.rows(),
        }
    }

    /// `f(Σ) x` through the eigenbasis; `f` receives eigenvalues of `Σ`.
    pub fn function_apply(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => x.iter().zip(v).map(|(&a, &s)| f(s) * a).collect(),
            Covariance::Dense {
                eigenvalues,
                eigenvectors,
                ..
            } => {
                let mut out = vec![0.0; x.len()];
                for (l, u) in eigenvalues.iter().zip(eigenvectors) {
                    let c = f(*l) * dot(u, x);
                    for (o, &ui) in out.iter_mut().zip(u) {
                        *o += c * ui;
                    }
                }
                out
            }
        }
    }

    /// `Σ x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => x.iter().zip(v).map(|(a, s)| a * s).collect(),
            Covariance::Dense { matrix, .. } => matrix.matvec(x),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            Covariance::Diagonal(v) => Matrix::diagonal(v),
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Diagonal(v) => v.iter().fold(0.0, |m, &s| m.max(s)),
            Covariance::Dense { eigenvalues, .. } => eigenvalues.iter().fold(0.0, |m, &s| m.max(s)),
        }
    }
}

/// Gaussian prior `N(μ0, Σ0)`; at noise level `t` the energy is
/// `t²·½(x−μ0)ᵀ(Σ0+t²I)⁻¹(x−μ0)`.
#[derive(Debug, Clone)]
pub struct GaussianEBM {
    mean: Field,
    covariance: Covariance,
}

impl GaussianEBM {
    pub fn new(mean: Field, covariance: Covariance) -> Result<Self> {
        if covariance.dim() != mean.len() {
            return Err(Error::LengthMismatch {
                shape: mean.shape().to_vec(),
                len: covariance.dim(),
            });
        }
        Ok(GaussianEBM { mean, covariance })
    }

    /// `N(0, variance·I)` on fields of `shape`.
    pub fn isotropic(shape: &[usize], variance: f64) -> Result<Self> {
        let mean = Field::zeros(shape);
        let cov = Covariance::isotropic(mean.len(), variance)?;
        GaussianEBM::new(mean, cov)
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    fn resolvent(&self, x: &Field, t: f64) -> (Vec<f64>, Vec<f64>) {
        let r: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(self.mean.as_slice())
            .map(|(a, m)| a - m)
            .collect();
        let t2 = t * t;
        let s = self.covariance.function_apply(&r, |l| 1.0 / (l + t2));
        (r, s)
    }
}

impl EnergyModel for GaussianEBM {
    fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    fn energy(&self, x: &Field, t: f64) -> Result<f64> {
        check_input(self, x, t)?;
        let (r, s) = self.resolvent(x, t);
        Ok(t * t * 0.5 * dot(&r, &s))
    }

    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field> {
        check_input(self, x, t)?;
        let (_, s) = self.resolvent(x, t);
        let g = Field::from_parts(x.shape(), s.into_iter().map(|v| t * t * v).collect());
        g.check_finite("gaussian grad_energy")?;
        Ok(g)
    }
}
