//! Structured symmetric positive definite operators and conjugate gradients.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::FftPlan;
use crate::field::{dot, Field};
use crate::linalg::Matrix;

/// Anything CG can iterate with: a symmetric linear map on flat buffers.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
}

impl SymmetricOperator for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matvec(x));
    }
}

/// One summand of a composite operator.
#[derive(Debug, Clone)]
pub enum SpdTerm {
    ScaledIdentity(f64),
    /// `scale · MᵀM` for a dense `M`.
    ScaledGram {
        matrix: Arc<Matrix>,
        scale: f64,
    },
    Diagonal(Vec<f64>),
    FourierDiagonal {
        plan: Arc<FftPlan>,
        spectrum: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub enum SpdDescriptor {
    Diagonal(Vec<f64>),
    /// Real eigenvalues indexed like the unitary FFT bins; must satisfy
    /// `λ(k) == λ(-k)` so real inputs map to real outputs.
    FourierDiagonal {
        plan: Arc<FftPlan>,
        spectrum: Vec<f64>,
    },
    Composite(Vec<SpdTerm>),
}

/// A symmetric positive definite operator with its structure attached.
#[derive(Debug, Clone)]
pub struct SpdOperator {
    shape: Vec<usize>,
    descriptor: SpdDescriptor,
}

impl SpdOperator {
    pub fn new(shape: &[usize], descriptor: SpdDescriptor) -> Result<Self> {
        let n: usize = shape.iter().product();
        let check_len = |len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    shape: shape.to_vec(),
                    len,
                })
            }
        };
        match &descriptor {
            SpdDescriptor::Diagonal(v) => check_len(v.len())?,
            SpdDescriptor::FourierDiagonal { plan, spectrum } => {
                check_len(spectrum.len())?;
                check_len(plan.len())?;
            }
            SpdDescriptor::Composite(terms) => {
                for term in terms {
                    match term {
                        SpdTerm::ScaledIdentity(_) => {}
                        SpdTerm::ScaledGram { matrix, .. } => check_len(matrix.cols())?,
                        SpdTerm::Diagonal(v) => check_len(v.len())?,
                        SpdTerm::FourierDiagonal { spectrum, .. } => check_len(spectrum.len())?,
                    }
                }
            }
        }
        Ok(SpdOperator {
            shape: shape.to_vec(),
            descriptor,
        })
    }

    pub fn identity(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        SpdOperator {
            shape: shape.to_vec(),
            descriptor: SpdDescriptor::Diagonal(vec![1.0; n]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn descriptor(&self) -> &SpdDescriptor {
        &self.descriptor
    }

    pub fn apply(&self, x: &Field) -> Result<Field> {
        x.expect_shape(&self.shape)?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x.as_slice(), &mut out);
        let f = Field::from_parts(&self.shape, out);
        f.check_finite("SpdOperator::apply")?;
        Ok(f)
    }
}

fn fourier_diagonal_apply(plan: &FftPlan, spectrum: &[f64], x: &[f64]) -> Vec<f64> {
    let mut s = plan.forward_real(x);
    for (c, &l) in s.iter_mut().zip(spectrum) {
        *c *= l;
    }
    plan.inverse_real(s)
}

impl SymmetricOperator for SpdOperator {
    fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.descriptor {
            SpdDescriptor::Diagonal(d) => {
                for ((o, &xi), &di) in out.iter_mut().zip(x).zip(d) {
                    *o = di * xi;
                }
            }
            SpdDescriptor::FourierDiagonal { plan, spectrum } => {
                out.copy_from_slice(&fourier_diagonal_apply(plan, spectrum, x));
            }
            SpdDescriptor::Composite(terms) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for term in terms {
                    match term {
                        SpdTerm::ScaledIdentity(c) => {
                            for (o, &xi) in out.iter_mut().zip(x) {
                                *o += c * xi;
                            }
                        }
                        SpdTerm::ScaledGram { matrix, scale } => {
                            let g = matrix.matvec_t(&matrix.matvec(x));
                            for (o, gi) in out.iter_mut().zip(g) {
                                *o += scale * gi;
                            }
                        }
                        SpdTerm::Diagonal(d) => {
                            for ((o, &xi), &di) in out.iter_mut().zip(x).zip(d) {
                                *o += di * xi;
                            }
                        }
                        SpdTerm::FourierDiagonal { plan, spectrum } => {
                            let y = fourier_diagonal_apply(plan, spectrum, x);
                            for (o, yi) in out.iter_mut().zip(y) {
                                *o += yi;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`cg_solve`]. `converged == false` means `max_iter` ran out
/// and `x` is the last iterate (CG decreases the energy-norm error
/// monotonically, so it is also the best one in that norm).
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Field,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Negative-curvature restarts; nonzero means the operator is suspect.
    pub restarts: usize,
}

/// Solves `op(x) = b` by conjugate gradients starting from `x0`.
///
/// Stops when `‖op(x) − b‖ / ‖b‖ ≤ tol`. A direction with non-positive
/// curvature triggers one restart from the current residual; a second one
/// in a row is reported as [`Error::NotPositiveDefinite`].
pub fn cg_solve<O: SymmetricOperator + ?Sized>(
    op: &O,
    b: &Field,
    x0: &Field,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    if !(tol > 0.0) {
        return Err(Error::invalid("cg tol", "must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("cg max_iter", "must be at least 1"));
    }
    b.same_shape(x0)?;
    if b.len() != op.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![op.dim()],
            found: b.shape().to_vec(),
        });
    }
    b.check_finite("cg right-hand side")?;
    x0.check_finite("cg initial guess")?;

    let shape = b.shape();
    let n = b.len();
    let b_norm = libm::sqrt(dot(b.as_slice(), b.as_slice()));
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: Field::zeros(shape),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            restarts: 0,
        });
    }

    let mut x = x0.as_slice().to_vec();
    let mut ap = vec![0.0; n];
    op.apply_into(&x, &mut ap);
    let mut r: Vec<f64> = b
        .as_slice()
        .iter()
        .zip(&ap)
        .map(|(bi, ai)| bi - ai)
        .collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut rel = libm::sqrt(rr) / b_norm;
    let mut restarts = 0;
    let mut just_restarted = true;
    let mut iterations = 0;

    while rel > tol && iterations < max_iter {
        iterations += 1;
        op.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite {
                context: "cg iteration",
                index: iterations,
            });
        }
        if pap <= 0.0 {
            if just_restarted {
                return Err(Error::NotPositiveDefinite {
                    iteration: iterations,
                });
            }
            restarts += 1;
            just_restarted = true;
            p.copy_from_slice(&r);
            continue;
        }
        just_restarted = false;
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::NonFinite {
                context: "cg iteration",
                index: iterations,
            });
        }
        rel = libm::sqrt(rr_new) / b_norm;
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }

    let x = Field::from_parts(shape, x);
    x.check_finite("cg solution")?;
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::inner;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let op = SpdOperator::identity(&[5]);
        let b = Field::from_vec(vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let out = cg_solve(&op, &b, &Field::zeros(&[5]), 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn diagonal_closed_form() {
        let op = SpdOperator::new(&[2], SpdDescriptor::Diagonal(vec![2.0, 4.0])).unwrap();
        let b = Field::from_vec(vec![2.0, 4.0]).unwrap();
        let out = cg_solve(&op, &b, &Field::zeros(&[2]), 1e-12, 10).unwrap();
        assert!((out.x.as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((out.x.as_slice()[1] - 1.0).abs() < 1e-14);
        assert!(out.converged);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let op = SpdOperator::identity(&[3]);
        let x0 = Field::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let out = cg_solve(&op, &Field::zeros(&[3]), &x0, 1e-8, 5).unwrap();
        assert_eq!(out.x, Field::zeros(&[3]));
    }

    #[test]
    fn inpainting_data_consistency_matches_per_pixel_formula() {
        // minimiser of ‖m⊙x − y‖²/2η² + ‖x − d‖²/2t² is
        // x_j = (m_j y_j/η² + d_j/t²)/(m_j/η² + 1/t²)
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let n = 64;
            let m: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            let eta = rng.random_range(0.01..1.0);
            let t = rng.random_range(0.01..10.0);
            let y: Vec<f64> = random_vec(&mut rng, n)
                .iter()
                .zip(&m)
                .map(|(v, mj)| v * mj)
                .collect();
            let d = random_vec(&mut rng, n);
            let diag: Vec<f64> = m
                .iter()
                .map(|mj| mj / (eta * eta) + 1.0 / (t * t))
                .collect();
            let op = SpdOperator::new(&[n], SpdDescriptor::Diagonal(diag)).unwrap();
            let rhs: Vec<f64> = (0..n)
                .map(|j| m[j] * y[j] / (eta * eta) + d[j] / (t * t))
                .collect();
            let out = cg_solve(
                &op,
                &Field::from_vec(rhs).unwrap(),
                &Field::zeros(&[n]),
                1e-12,
                n,
            )
            .unwrap();
            for j in 0..n {
                let expect = (m[j] * y[j] / (eta * eta) + d[j] / (t * t))
                    / (m[j] / (eta * eta) + 1.0 / (t * t));
                assert!((out.x.as_slice()[j] - expect).abs() <= 1e-8 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn reports_non_convergence_and_indefinite_operators() {
        let op = SpdOperator::new(
            &[4],
            SpdDescriptor::Diagonal(vec![1.0, 10.0, 100.0, 1000.0]),
        )
        .unwrap();
        let b = Field::from_vec(vec![1.0; 4]).unwrap();
        let out = cg_solve(&op, &b, &Field::zeros(&[4]), 1e-14, 2).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);

        let bad = SpdOperator::new(&[2], SpdDescriptor::Diagonal(vec![-1.0, -2.0])).unwrap();
        let err = cg_solve(
            &bad,
            &Field::from_vec(vec![1.0, 1.0]).unwrap(),
            &Field::zeros(&[2]),
            1e-8,
            5,
        );
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));

        assert!(cg_solve(&op, &b, &Field::zeros(&[4]), 0.0, 2).is_err());
        assert!(cg_solve(&op, &b, &Field::zeros(&[4]), 1e-3, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        /// CG reaches the exact solution of an SPD system within n iterations.
        #[test]
        fn cg_finite_termination(n in 2usize..48, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Matrix::new(n, n, random_vec(&mut rng, n * n)).unwrap();
            let op = SpdOperator::new(&[n], SpdDescriptor::Composite(vec![
                SpdTerm::ScaledGram { matrix: Arc::new(g.clone()), scale: 1.0 },
                SpdTerm::ScaledIdentity(0.5),
            ])).unwrap();
            let b = Field::from_vec(random_vec(&mut rng, n)).unwrap();
            let out = cg_solve(&op, &b, &Field::zeros(&[n]), 1e-10, 4 * n).unwrap();
            // dense oracle: normal equations solved by nalgebra LU
            let gm = nalgebra::DMatrix::from_row_slice(n, n, g.as_slice());
            let a = gm.transpose() * &gm + nalgebra::DMatrix::identity(n, n) * 0.5;
            let exact = a.lu().solve(&nalgebra::DVector::from_column_slice(b.as_slice())).unwrap();
            for (x, e) in out.x.as_slice().iter().zip(exact.iter()) {
                prop_assert!((x - e).abs() <= 1e-8 * e.abs().max(1.0));
            }
        }

        #[test]
        fn composite_operator_is_symmetric_and_positive(n in 2usize..32, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Matrix::new(n + 1, n, random_vec(&mut rng, (n + 1) * n)).unwrap();
            let op = SpdOperator::new(&[n], SpdDescriptor::Composite(vec![
                SpdTerm::ScaledGram { matrix: Arc::new(g), scale: 3.0 },
                SpdTerm::ScaledIdentity(0.1),
            ])).unwrap();
            let u = Field::from_vec(random_vec(&mut rng, n)).unwrap();
            let v = Field::from_vec(random_vec(&mut rng, n)).unwrap();
            let muv = inner(&op.apply(&u).unwrap(), &v).unwrap();
            let umv = inner(&u, &op.apply(&v).unwrap()).unwrap();
            prop_assert!((muv - umv).abs() <= 1e-10 * muv.abs().max(1.0));
            prop_assert!(inner(&u, &op.apply(&u).unwrap()).unwrap() > 0.0);
        }
    }
}
