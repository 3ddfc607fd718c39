//! Linear measurement operators `A` with adjoints and normal-operator structure.
//!
//! Each operator carries enough structure to apply spectral functions of
//! `AᵀA` exactly: pixel masks are diagonal, circular blurs and k-space
//! undersampling are diagonal in the unitary Fourier basis, and dense
//! matrices use their SVD.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::cg::{SpdDescriptor, SpdOperator, SpdTerm};
use crate::error::{Error, Result};
use crate::fft::FftPlan;
use crate::field::Field;
use crate::linalg::{Matrix, Svd};

/// Relative cut-off (of the largest singular value) used by pseudo-inverses.
pub const PINV_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub enum ForwardStructure {
    /// `A = diag(m)` with `m ∈ {0, 1}`; output shape equals input shape.
    DiagonalMask {
        mask: Vec<f64>,
    },
    /// Periodic convolution, `A = Fᴴ diag(h) F` (unitary `F`).
    Circulant {
        plan: Arc<FftPlan>,
        spectrum: Vec<Complex64>,
    },
    /// `A x = S ⊙ F x`, stored as stacked real and imaginary planes.
    FourierUndersampling {
        plan: Arc<FftPlan>,
        sampling: Vec<f64>,
    },
    Dense {
        matrix: Arc<Matrix>,
        svd: Arc<Svd>,
    },
}

#[derive(Debug, Clone)]
pub struct LinearForwardModel {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    structure: ForwardStructure,
}

impl LinearForwardModel {
    pub fn identity(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        LinearForwardModel {
            input_shape: shape.to_vec(),
            output_shape: shape.to_vec(),
            structure: ForwardStructure::DiagonalMask { mask: vec![1.0; n] },
        }
    }

    /// `A = 0`: no measurement information at all.
    pub fn zero(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        LinearForwardModel {
            input_shape: shape.to_vec(),
            output_shape: shape.to_vec(),
            structure: ForwardStructure::DiagonalMask { mask: vec![0.0; n] },
        }
    }

    /// Inpainting: keep pixels where `mask == 1`, drop where `mask == 0`.
    pub fn mask(mask: &Field) -> Result<Self> {
        if mask.as_slice().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask", "entries must be 0 or 1"));
        }
        Ok(LinearForwardModel {
            input_shape: mask.shape().to_vec(),
            output_shape: mask.shape().to_vec(),
            structure: ForwardStructure::DiagonalMask {
                mask: mask.as_slice().to_vec(),
            },
        })
    }

    /// Periodic convolution with `kernel`, given on the image grid with its
    /// origin at index 0 (negative offsets wrap around).
    pub fn circulant(kernel: &Field) -> Result<Self> {
        let plan = FftPlan::new(kernel.shape())?;
        let root_n = libm::sqrt(kernel.len() as f64);
        let spectrum = plan
            .forward_real(kernel.as_slice())
            .into_iter()
            .map(|c| c * root_n)
            .collect();
        Ok(LinearForwardModel {
            input_shape: kernel.shape().to_vec(),
            output_shape: kernel.shape().to_vec(),
            structure: ForwardStructure::Circulant {
                plan: Arc::new(plan),
                spectrum,
            },
        })
    }

    /// Single-coil k-space undersampling. `sampling` must be a 0/1 field that
    /// is symmetric under `k → −k`, which makes `AᵀA` an orthogonal projector.
    pub fn fourier_undersampling(sampling: &Field) -> Result<Self> {
        let plan = FftPlan::new(sampling.shape())?;
        let s = sampling.as_slice();
        if s.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("sampling mask", "entries must be 0 or 1"));
        }
        if (0..s.len()).any(|i| s[i] != s[plan.negated_index(i)]) {
            return Err(Error::invalid(
                "sampling mask",
                "must be symmetric under k -> -k",
            ));
        }
        let mut output_shape = vec![2];
        output_shape.extend_from_slice(sampling.shape());
        Ok(LinearForwardModel {
            input_shape: sampling.shape().to_vec(),
            output_shape,
            structure: ForwardStructure::FourierUndersampling {
                plan: Arc::new(plan),
                sampling: s.to_vec(),
            },
        })
    }

    pub fn dense(matrix: Matrix) -> Result<Self> {
        let input_shape = vec![matrix.cols()];
        Self::dense_with_shape(matrix, &input_shape)
    }

    /// Dense operator acting on a field of `input_shape` (flattened row-major).
    pub fn dense_with_shape(matrix: Matrix, input_shape: &[usize]) -> Result<Self> {
        if input_shape.iter().product::<usize>() != matrix.cols() {
            return Err(Error::LengthMismatch {
                shape: input_shape.to_vec(),
                len: matrix.cols(),
            });
        }
        let svd = Svd::new(&matrix)?;
        Ok(LinearForwardModel {
            input_shape: input_shape.to_vec(),
            output_shape: vec![matrix.rows()],
            structure: ForwardStructure::Dense {
                matrix: Arc::new(matrix),
                svd: Arc::new(svd),
            },
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn structure(&self) -> &ForwardStructure {
        &self.structure
    }

    pub fn structure_name(&self) -> &'static str {
        match self.structure {
            ForwardStructure::DiagonalMask { .. } => "diagonal_mask",
            ForwardStructure::Circulant { .. } => "circulant",
            ForwardStructure::FourierUndersampling { .. } => "fourier_undersampling",
            ForwardStructure::Dense { .. } => "dense",
        }
    }

    /// `A x`
    pub fn apply(&self, x: &Field) -> Result<Field> {
        x.expect_shape(&self.input_shape)?;
        let xs = x.as_slice();
        let out = match &self.structure {
            ForwardStructure::DiagonalMask { mask } => {
                xs.iter().zip(mask).map(|(a, m)| a * m).collect()
            }
            ForwardStructure::Circulant { plan, spectrum } => {
                let mut s = plan.forward_real(xs);
                for (c, h) in s.iter_mut().zip(spectrum) {
                    *c *= h;
                }
                plan.inverse_real(s)
            }
            ForwardStructure::FourierUndersampling { plan, sampling } => {
                let s = plan.forward_real(xs);
                let n = s.len();
                let mut out = vec![0.0; 2 * n];
                for (i, (c, &m)) in s.iter().zip(sampling).enumerate() {
                    out[i] = m * c.re;
                    out[n + i] = m * c.im;
                }
                out
            }
            ForwardStructure::Dense { matrix, .. } => matrix.matvec(xs),
        };
        let f = Field::from_parts(&self.output_shape, out);
        f.check_finite("forward apply")?;
        Ok(f)
    }

    /// `Aᵀ u`
    pub fn adjoint(&self, u: &Field) -> Result<Field> {
        u.expect_shape(&self.output_shape)?;
        let us = u.as_slice();
        let out = match &self.structure {
            ForwardStructure::DiagonalMask { mask } => {
                us.iter().zip(mask).map(|(a, m)| a * m).collect()
            }
            ForwardStructure::Circulant { plan, spectrum } => {
                let mut s = plan.forward_real(us);
                for (c, h) in s.iter_mut().zip(spectrum) {
                    *c *= h.conj();
                }
                plan.inverse_real(s)
            }
            ForwardStructure::FourierUndersampling { plan, sampling } => {
                let n = sampling.len();
                let c: Vec<Complex64> = (0..n)
                    .map(|i| Complex64::new(us[i], us[n + i]) * sampling[i])
                    .collect();
                plan.inverse_real(c)
            }
            ForwardStructure::Dense { matrix, .. } => matrix.matvec_t(us),
        };
        let f = Field::from_parts(&self.input_shape, out);
        f.check_finite("forward adjoint")?;
        Ok(f)
    }

    /// Largest singular value of `A`.
    pub fn max_singular_value(&self) -> f64 {
        match &self.structure {
            ForwardStructure::DiagonalMask { mask } => mask.iter().fold(0.0, |m, &v| m.max(v)),
            ForwardStructure::Circulant { spectrum, .. } => {
                spectrum.iter().fold(0.0, |m, h| m.max(h.norm()))
            }
            ForwardStructure::FourierUndersampling { sampling, .. } => {
                sampling.iter().fold(0.0, |m, &v| m.max(v))
            }
            ForwardStructure::Dense { svd, .. } => svd.max_singular(),
        }
    }

    /// Applies `f(AᵀA)` exactly through the operator's eigenbasis;
    /// `f` receives eigenvalues of `AᵀA`.
    pub fn gram_function_apply(&self, x: &Field, f: impl Fn(f64) -> f64) -> Result<Field> {
        x.expect_shape(&self.input_shape)?;
        let xs = x.as_slice();
        let out = match &self.structure {
            ForwardStructure::DiagonalMask { mask } => {
                xs.iter().zip(mask).map(|(&a, &m)| f(m * m) * a).collect()
            }
            ForwardStructure::Circulant { plan, spectrum } => {
                let mut s = plan.forward_real(xs);
                for (c, h) in s.iter_mut().zip(spectrum) {
                    *c *= f(h.norm_sqr());
                }
                plan.inverse_real(s)
            }
            ForwardStructure::FourierUndersampling { plan, sampling } => {
                let mut s = plan.forward_real(xs);
                for (c, &m) in s.iter_mut().zip(sampling) {
                    *c *= f(m);
                }
                plan.inverse_real(s)
            }
            ForwardStructure::Dense { svd, .. } => svd.gram_function_apply(xs, f),
        };
        let out = Field::from_parts(&self.input_shape, out);
        out.check_finite("gram function")?;
        Ok(out)
    }

    /// Diagonal of `AᵀA` in the pixel basis.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        let n = self.input_len();
        match &self.structure {
            ForwardStructure::DiagonalMask { mask } => mask.iter().map(|m| m * m).collect(),
            ForwardStructure::Circulant { spectrum, .. } => {
                let mean = spectrum.iter().map(|h| h.norm_sqr()).sum::<f64>() / n as f64;
                vec![mean; n]
            }
            ForwardStructure::FourierUndersampling { sampling, .. } => {
                let mean = sampling.iter().sum::<f64>() / n as f64;
                vec![mean; n]
            }
            ForwardStructure::Dense { matrix, .. } => (0..n)
                .map(|c| {
                    (0..matrix.rows())
                        .map(|r| matrix.get(r, c) * matrix.get(r, c))
                        .sum()
                })
                .collect(),
        }
    }

    /// `AᵀA · data_weight + I · identity_weight`, with structure propagated.
    pub fn normal_plus_identity(
        &self,
        data_weight: f64,
        identity_weight: f64,
    ) -> Result<SpdOperator> {
        if !(data_weight >= 0.0) || !(identity_weight > 0.0) {
            return Err(Error::invalid(
                "normal operator weights",
                "need data weight >= 0 and identity weight > 0",
            ));
        }
        let descriptor = match &self.structure {
            ForwardStructure::DiagonalMask { mask } => SpdDescriptor::Diagonal(
                mask.iter()
                    .map(|m| m * m * data_weight + identity_weight)
                    .collect(),
            ),
            ForwardStructure::Circulant { plan, spectrum } => SpdDescriptor::FourierDiagonal {
                plan: plan.clone(),
                spectrum: spectrum
                    .iter()
                    .map(|h| h.norm_sqr() * data_weight + identity_weight)
                    .collect(),
            },
            ForwardStructure::FourierUndersampling { plan, sampling } => {
                SpdDescriptor::FourierDiagonal {
                    plan: plan.clone(),
                    spectrum: sampling
                        .iter()
                        .map(|m| m * data_weight + identity_weight)
                        .collect(),
                }
            }
            ForwardStructure::Dense { matrix, .. } => SpdDescriptor::Composite(vec![
                SpdTerm::ScaledGram {
                    matrix: matrix.clone(),
                    scale: data_weight,
                },
                SpdTerm::ScaledIdentity(identity_weight),
            ]),
        };
        SpdOperator::new(&self.input_shape, descriptor)
    }

    /// `AᵀA/η² + I/t²`
    pub fn normal_plus_scaled_identity(&self, eta: f64, t: f64) -> Result<SpdOperator> {
        if !(eta > 0.0) || !(t > 0.0) {
            return Err(Error::invalid("eta/t", "must be positive"));
        }
        self.normal_plus_identity(1.0 / (eta * eta), 1.0 / (t * t))
    }

    /// `(AᵀA)† Aᵀ y`, dropping singular values below
    /// [`PINV_THRESHOLD`] times the largest one.
    pub fn pseudo_inverse_apply(&self, y: &Field) -> Result<Field> {
        if let ForwardStructure::Dense { svd, .. } = &self.structure {
            y.expect_shape(&self.output_shape)?;
            let x = svd.pseudo_inverse_apply(y.as_slice(), PINV_THRESHOLD);
            let x = Field::from_parts(&self.input_shape, x);
            x.check_finite("pseudo-inverse")?;
            return Ok(x);
        }
        let aty = self.adjoint(y)?;
        let cut = PINV_THRESHOLD * self.max_singular_value();
        self.gram_function_apply(&aty, |lambda| {
            if lambda > 0.0 && libm::sqrt(lambda) > cut {
                1.0 / lambda
            } else {
                0.0
            }
        })
    }
}

/// Normalized Gaussian blur kernel on a periodic grid, origin at index 0.
pub fn gaussian_kernel(shape: &[usize], width: f64) -> Result<Field> {
    if !(width > 0.0) {
        return Err(Error::invalid("kernel width", "must be positive"));
    }
    periodic_kernel(shape, |dr, dc| {
        libm::exp(-0.5 * (dr * dr + dc * dc) / (width * width))
    })
}

/// Horizontal box (motion) blur of `length` pixels centered on the origin.
pub fn motion_kernel(shape: &[usize], length: usize) -> Result<Field> {
    if length == 0 {
        return Err(Error::invalid("motion length", "must be at least 1"));
    }
    let half = (length as f64 - 1.0) / 2.0;
    periodic_kernel(shape, |dr, dc| {
        if dr == 0.0 && dc >= -half - 1e-9 && dc <= half + 1e-9 {
            1.0
        } else {
            0.0
        }
    })
}

fn periodic_kernel(shape: &[usize], value: impl Fn(f64, f64) -> f64) -> Result<Field> {
    let wrap = |i: usize, n: usize| {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    let (h, w) = match *shape {
        [n] => (1, n),
        [h, w] => (h, w),
        _ => {
            return Err(Error::UnsupportedShape {
                shape: shape.to_vec(),
                reason: "kernels are 1-D or 2-D",
            })
        }
    };
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let dr = if h == 1 { 0.0 } else { wrap(r, h) };
            data.push(value(dr, wrap(c, w)));
        }
    }
    let total: f64 = data.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("kernel", "has zero mass on this grid"));
    }
    data.iter_mut().for_each(|v| *v /= total);
    Field::new(shape, data)
}

/// Cartesian line mask: every `acceleration`-th row (phase-encode line)
/// plus `center_lines` rows around DC, symmetric under `k → −k`.
pub fn line_sampling_mask(
    shape: &[usize],
    acceleration: usize,
    center_lines: usize,
) -> Result<Field> {
    if acceleration == 0 {
        return Err(Error::invalid("acceleration", "must be at least 1"));
    }
    let plan = FftPlan::new(shape)?;
    let n = plan.len();
    let mut mask = vec![0.0; n];
    for (i, m) in mask.iter_mut().enumerate() {
        let (ky, _) = match *shape {
            [_] => (plan.frequency(i).0, 0),
            _ => plan.frequency(i),
        };
        let keep = ky.rem_euclid(acceleration as i64) == 0
            || (ky.unsigned_abs() as usize) * 2 < center_lines;
        *m = if keep { 1.0 } else { 0.0 };
    }
    symmetrize(&plan, &mut mask);
    Field::new(shape, mask)
}

/// Uniform random k-space mask with the given sampling `density`, made
/// symmetric under `k → −k`; DC is always sampled.
pub fn random_sampling_mask<R: Rng + ?Sized>(
    shape: &[usize],
    density: f64,
    rng: &mut R,
) -> Result<Field> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid("density", "must lie in (0, 1]"));
    }
    let plan = FftPlan::new(shape)?;
    let n = plan.len();
    let mut mask = vec![0.0; n];
    for i in 0..n {
        let j = plan.negated_index(i);
        if j < i {
            continue;
        }
        let keep = i == 0 || rng.random::<f64>() < density;
        mask[i] = if keep { 1.0 } else { 0.0 };
        mask[j] = mask[i];
    }
    Field::new(shape, mask)
}

fn symmetrize(plan: &FftPlan, mask: &mut [f64]) {
    for i in 0..mask.len() {
        let j = plan.negated_index(i);
        let v = mask[i].max(mask[j]);
        mask[i] = v;
        mask[j] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cg::SymmetricOperator;
    use crate::field::{inner, norm2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field<R: Rng>(rng: &mut R, shape: &[usize]) -> Field {
        let n = shape.iter().product();
        Field::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn operators(rng: &mut ChaCha8Rng) -> Vec<LinearForwardModel> {
        let mask = Field::new(
            &[8, 8],
            (0..64).map(|i| ((i * 7) % 3 != 0) as u8 as f64).collect(),
        )
        .unwrap();
        let dense = Matrix::new(
            8,
            16,
            (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        vec![
            LinearForwardModel::identity(&[8, 8]),
            LinearForwardModel::mask(&mask).unwrap(),
            LinearForwardModel::circulant(&gaussian_kernel(&[8, 8], 1.2).unwrap()).unwrap(),
            LinearForwardModel::circulant(&motion_kernel(&[16, 16], 5).unwrap()).unwrap(),
            LinearForwardModel::fourier_undersampling(
                &line_sampling_mask(&[16, 16], 4, 2).unwrap(),
            )
            .unwrap(),
            LinearForwardModel::fourier_undersampling(
                &random_sampling_mask(&[8, 8], 0.3, rng).unwrap(),
            )
            .unwrap(),
            LinearForwardModel::dense(dense).unwrap(),
        ]
    }

    #[test]
    fn adjoint_test_for_every_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for op in operators(&mut rng) {
            for _ in 0..100 {
                let x = random_field(&mut rng, op.input_shape());
                let u = random_field(&mut rng, op.output_shape());
                let lhs = inner(&op.apply(&x).unwrap(), &u).unwrap();
                let rhs = inner(&x, &op.adjoint(&u).unwrap()).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                    "{}: {lhs} vs {rhs}",
                    op.structure_name()
                );
            }
        }
    }

    #[test]
    fn mask_and_undersampling_grams_are_projectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for op in operators(&mut rng) {
            let projector = matches!(
                op.structure(),
                ForwardStructure::DiagonalMask { .. }
                    | ForwardStructure::FourierUndersampling { .. }
            );
            if !projector {
                continue;
            }
            let x = random_field(&mut rng, op.input_shape());
            let ax = op.apply(&x).unwrap();
            let aaax = op.apply(&op.adjoint(&ax).unwrap()).unwrap();
            for (a, b) in ax.as_slice().iter().zip(aaax.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn undersampling_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let op = LinearForwardModel::fourier_undersampling(
            &random_sampling_mask(&[16, 16], 0.25, &mut rng).unwrap(),
        )
        .unwrap();
        for _ in 0..50 {
            let x = random_field(&mut rng, &[16, 16]);
            assert!(norm2(&op.apply(&x).unwrap()) <= norm2(&x) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn asymmetric_sampling_mask_is_rejected() {
        let mut m = Field::zeros(&[8]);
        m.data_mut()[1] = 1.0;
        assert!(LinearForwardModel::fourier_undersampling(&m).is_err());
        assert!(LinearForwardModel::mask(&Field::filled(&[3], 0.5)).is_err());
    }

    #[test]
    fn normal_operator_for_mask_and_identity() {
        let m = Field::from_vec(vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let op = LinearForwardModel::mask(&m)
            .unwrap()
            .normal_plus_scaled_identity(1.0, 1.0)
            .unwrap();
        match op.descriptor() {
            SpdDescriptor::Diagonal(d) => assert_eq!(d, &vec![2.0, 1.0, 2.0, 1.0]),
            other => panic!("expected diagonal, got {other:?}"),
        }
        let t = 0.3;
        let id = LinearForwardModel::identity(&[3])
            .normal_plus_scaled_identity(t, t)
            .unwrap();
        match id.descriptor() {
            SpdDescriptor::Diagonal(d) => {
                for v in d {
                    assert!((v - 2.0 / (t * t)).abs() < 1e-12);
                }
            }
            other => panic!("expected diagonal, got {other:?}"),
        }
    }

    #[test]
    fn circulant_normal_operator_matches_dense_assembly() {
        // Assemble A column by column and form AᵀA/η² + I/t² densely.
        let shape = [16, 16];
        let n = 256;
        let (eta, t) = (0.2, 0.7);
        let op = LinearForwardModel::circulant(&gaussian_kernel(&shape, 1.5).unwrap()).unwrap();
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = Field::zeros(&shape);
            e.data_mut()[j] = 1.0;
            cols.push(op.apply(&e).unwrap().into_vec());
        }
        let a = nalgebra::DMatrix::from_fn(n, n, |r, c| cols[c][r]);
        let dense = a.transpose() * &a / (eta * eta) + nalgebra::DMatrix::identity(n, n) / (t * t);
        let spd = op.normal_plus_scaled_identity(eta, t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_field(&mut rng, &shape);
        let mut ours = vec![0.0; n];
        spd.apply_into(x.as_slice(), &mut ours);
        let expect = &dense * nalgebra::DVector::from_column_slice(x.as_slice());
        for (a, b) in ours.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        // eigenvalues: |h(k)|²/η² + 1/t²
        let mut dense_eigs: Vec<f64> = dense
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ours_eigs = match spd.descriptor() {
            SpdDescriptor::FourierDiagonal { spectrum, .. } => spectrum.clone(),
            other => panic!("expected Fourier-diagonal, got {other:?}"),
        };
        ours_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ours_eigs.iter().zip(&dense_eigs) {
            assert!((a - b).abs() < 1e-8 * b.abs());
        }
    }

    #[test]
    fn pseudo_inverse_special_cases() {
        let y = Field::from_vec(vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(
            LinearForwardModel::identity(&[3])
                .pseudo_inverse_apply(&y)
                .unwrap(),
            y
        );
        let m = Field::from_vec(vec![1.0, 0.0, 1.0]).unwrap();
        let x = LinearForwardModel::mask(&m)
            .unwrap()
            .pseudo_inverse_apply(&y)
            .unwrap();
        assert_eq!(x.as_slice(), &[0.3, 0.0, 2.0]);
        let zero = LinearForwardModel::zero(&[3])
            .pseudo_inverse_apply(&y)
            .unwrap();
        assert_eq!(zero, Field::zeros(&[3]));
    }

    #[test]
    fn dense_pseudo_inverse_matches_nalgebra_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = LinearForwardModel::dense(Matrix::new(8, 16, data.clone()).unwrap()).unwrap();
        let y = random_field(&mut rng, &[8]);
        let ours = op.pseudo_inverse_apply(&y).unwrap();
        let pinv = nalgebra::DMatrix::from_row_slice(8, 16, &data)
            .pseudo_inverse(1e-12)
            .unwrap();
        let expect = pinv * nalgebra::DVector::from_column_slice(y.as_slice());
        for (a, b) in ours.as_slice().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn circulant_pseudo_inverse_inverts_on_the_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = LinearForwardModel::circulant(&motion_kernel(&[8, 8], 3).unwrap()).unwrap();
        let x = random_field(&mut rng, &[8, 8]);
        let y = op.apply(&x).unwrap();
        let back = op.apply(&op.pseudo_inverse_apply(&y).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn line_mask_keeps_the_expected_fraction() {
        let m = line_sampling_mask(&[32, 32], 4, 0).unwrap();
        let kept = m.as_slice().iter().sum::<f64>() / 1024.0;
        assert!((kept - 0.25).abs() < 1e-12);
    }
}
