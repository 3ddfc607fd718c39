use alloc::vec::Vec;

use rand::Rng;

use super::{check_input, EnergyModel};
use crate::error::{Error, Result};
use crate::field::{dot, Field};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::normal_vec;

#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

/// Gaussian mixture prior; at noise level `t` each component covariance
/// is widened by `t²I` and `E(x; t) = −t² log p_t(x)` without the `(2π)`
/// normalization constant.
#[derive(Debug, Clone)]
pub struct GaussianMixtureEBM {
    components: Vec<MixtureComponent>,
    clean_factors: Vec<Cholesky>,
    shape: Vec<usize>,
}

struct ComponentTerms {
    /// `log π_k − ½ rᵀS⁻¹r − ½ log det S`
    log_terms: Vec<f64>,
    /// `S_k⁻¹ (x − μ_k)`
    solved: Vec<Vec<f64>>,
}

impl GaussianMixtureEBM {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture", "needs at least one component"))?;
        let n = first.mean.len();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "mixture weights",
                "must be positive and sum to 1",
            ));
        }
        let mut clean_factors = Vec::with_capacity(components.len());
        for c in &components {
            if c.mean.len() != n || c.covariance.rows() != n || c.covariance.cols() != n {
                return Err(Error::invalid(
                    "mixture",
                    "components must share one dimension",
                ));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "mixture mean",
                    index: 0,
                });
            }
            if !c.covariance.is_symmetric(1e-12) {
                return Err(Error::invalid("mixture covariance", "must be symmetric"));
            }
            clean_factors.push(Cholesky::new(&c.covariance)?);
        }
        Ok(GaussianMixtureEBM {
            components,
            clean_factors,
            shape: alloc::vec![n],
        })
    }

    /// Mixture of isotropic components sharing one variance.
    pub fn isotropic(weights: &[f64], means: &[Vec<f64>], variance: f64) -> Result<Self> {
        if weights.len() != means.len() {
            return Err(Error::invalid(
                "mixture",
                "weights and means differ in length",
            ));
        }
        let comps = weights
            .iter()
            .zip(means)
            .map(|(&w, m)| MixtureComponent {
                weight: w,
                mean: m.clone(),
                covariance: Matrix::diagonal(&alloc::vec![variance; m.len()]),
            })
            .collect();
        GaussianMixtureEBM::new(comps)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn terms(&self, x: &[f64], t: f64) -> Result<ComponentTerms> {
        let t2 = t * t;
        let mut log_terms = Vec::with_capacity(self.components.len());
        let mut solved = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let n = c.mean.len();
            let mut s = c.covariance.clone();
            let widened: Vec<f64> = (0..n * n)
                .map(|i| s.as_slice()[i] + if i / n == i % n { t2 } else { 0.0 })
                .collect();
            s = Matrix::new(n, n, widened)?;
            let chol = Cholesky::new(&s)?;
            let r: Vec<f64> = x.iter().zip(&c.mean).map(|(a, m)| a - m).collect();
            let sr = chol.solve(&r);
            log_terms.push(libm::log(c.weight) - 0.5 * dot(&r, &sr) - 0.5 * chol.log_det());
            solved.push(sr);
        }
        Ok(ComponentTerms { log_terms, solved })
    }

    /// Posterior component probabilities of `x` under the `t`-widened mixture.
    pub fn responsibilities(&self, x: &Field, t: f64) -> Result<Vec<f64>> {
        check_input(self, x, t)?;
        let terms = self.terms(x.as_slice(), t)?;
        Ok(softmax(&terms.log_terms))
    }

    /// Draw from the clean (`t = 0`) mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Field {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.components[k];
        let z = normal_vec(rng, c.mean.len());
        let d = self.clean_factors[k].lower_apply(&z);
        Field::from_parts(
            &self.shape,
            c.mean.iter().zip(d).map(|(m, v)| m + v).collect(),
        )
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| libm::exp(x - lse)).collect()
}

impl EnergyModel for GaussianMixtureEBM {
    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn energy(&self, x: &Field, t: f64) -> Result<f64> {
        check_input(self, x, t)?;
        let terms = self.terms(x.as_slice(), t)?;
        let e = -t * t * log_sum_exp(&terms.log_terms);
        if !e.is_finite() {
            return Err(Error::NonFinite {
                context: "mixture energy",
                index: 0,
            });
        }
        Ok(e)
    }

    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field> {
        Ok(self.energy_and_grad(x, t)?.1)
    }

    fn energy_and_grad(&self, x: &Field, t: f64) -> Result<(f64, Field)> {
        check_input(self, x, t)?;
        let terms = self.terms(x.as_slice(), t)?;
        let w = softmax(&terms.log_terms);
        let mut g = alloc::vec![0.0; x.len()];
        for (wk, sk) in w.iter().zip(&terms.solved) {
            for (gi, s) in g.iter_mut().zip(sk) {
                *gi += t * t * wk * s;
            }
        }
        let g = Field::from_parts(x.shape(), g);
        g.check_finite("mixture grad_energy")?;
        Ok((-t * t * log_sum_exp(&terms.log_terms), g))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{fd_gradient, rel_err};
    use super::*;
    use alloc::vec;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_component() -> GaussianMixtureEBM {
        GaussianMixtureEBM::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-1.0, 0.5],
                covariance: Matrix::from_rows(&[vec![0.2, 0.05], vec![0.05, 0.1]]).unwrap(),
            },
            MixtureComponent {
                weight: 0.3,
                mean: vec![1.5, -0.5],
                covariance: Matrix::diagonal(&[0.05, 0.3]),
            },
            MixtureComponent {
                weight: 0.2,
                mean: vec![0.0, 2.0],
                covariance: Matrix::diagonal(&[0.1, 0.1]),
            },
        ])
        .unwrap()
    }

    /// Independent density: full normalized Gaussian pdfs via nalgebra.
    fn direct_score_times_t2(m: &GaussianMixtureEBM, x: &[f64], t: f64) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let mut p = 0.0;
        let mut dp = DVector::zeros(x.len());
        for c in m.components() {
            let n = x.len();
            let s = DMatrix::from_row_slice(n, n, c.covariance.as_slice())
                + DMatrix::identity(n, n) * (t * t);
            let inv = s.clone().try_inverse().unwrap();
            let r = &xv - DVector::from_column_slice(&c.mean);
            let q = (r.transpose() * &inv * &r)[(0, 0)];
            let pdf = c.weight * (-0.5 * q).exp()
                / ((2.0 * core::f64::consts::PI).powi(n as i32) * s.determinant()).sqrt();
            p += pdf;
            dp -= inv * r * pdf;
        }
        (dp / p * (-t * t)).iter().copied().collect()
    }

    #[test]
    fn gradient_matches_direct_density() {
        let m = three_component();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = rng.random_range(0.05..2.0);
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..2.5)];
            let g = m.grad_energy(&Field::from_slice(&x).unwrap(), t).unwrap();
            let expect = direct_score_times_t2(&m, &x, t);
            assert!(rel_err(g.as_slice(), &expect) < 1e-8);
            let fd = fd_gradient(&m, &Field::from_slice(&x).unwrap(), t, 1e-5);
            assert!(rel_err(g.as_slice(), &fd) < 1e-4);
        }
    }

    #[test]
    fn symmetric_pair_has_even_energy() {
        let m =
            GaussianMixtureEBM::isotropic(&[0.5, 0.5], &[vec![1.0, 0.3], vec![-1.0, -0.3]], 0.2)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let t = rng.random_range(0.1..2.0);
            let a = m.energy(&Field::from_slice(&x).unwrap(), t).unwrap();
            let b = m.energy(&Field::from_slice(&neg).unwrap(), t).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn cross_partials_are_symmetric() {
        let m = three_component();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..2.0)];
            let t = rng.random_range(0.1..1.0);
            let g = |a: f64, b: f64| {
                m.grad_energy(&Field::from_slice(&[a, b]).unwrap(), t)
                    .unwrap()
                    .into_vec()
            };
            let d01 = (g(x[0], x[1] + h)[0] - g(x[0], x[1] - h)[0]) / (2.0 * h);
            let d10 = (g(x[0] + h, x[1])[1] - g(x[0] - h, x[1])[1]) / (2.0 * h);
            assert!((d01 - d10).abs() < 1e-4 * d01.abs().max(1.0));
        }
    }

    #[test]
    fn sampling_follows_weights() {
        let m = GaussianMixtureEBM::isotropic(&[0.7, 0.3], &[vec![-4.0, 0.0], vec![4.0, 0.0]], 0.1)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let left = (0..20_000)
            .filter(|_| m.sample(&mut rng).as_slice()[0] < 0.0)
            .count();
        assert!((left as f64 / 20_000.0 - 0.7).abs() < 0.01);
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(GaussianMixtureEBM::isotropic(&[0.5, 0.6], &[vec![0.0], vec![1.0]], 1.0).is_err());
        assert!(GaussianMixtureEBM::isotropic(&[1.0], &[vec![0.0]], -1.0).is_err());
        assert!(GaussianMixtureEBM::new(vec![]).is_err());
    }
}
