//! Annealed Langevin posterior sampling and majorization-minimization MAP.
//!
//! The posterior at noise level `t` is `exp(−C_t)` with
//! `C_t(x) = ‖Ax − y‖²/(2η²) + E(x; t)/t²`. Each Langevin step denoises the
//! current iterate, solves the quadratic data-consistency problem
//! `(AᵀA/η² + I/t²) x̃ = Aᵀy/η² + d/t²` by conjugate gradients, and adds
//! `B^{1/2} ξ` with `B = (AᵀA/η² + I/t²)⁻¹`.

use alloc::vec::Vec;

use rand::Rng;

use crate::cg::{cg_solve, CgOutcome};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::{norm2, Field};
use crate::forward::{ForwardStructure, LinearForwardModel};
use crate::rng::{chain_rng, normal_field};
use crate::schedule::NoiseSchedule;

/// `(energy model, A, y, η)`.
#[derive(Clone, Copy)]
pub struct PosteriorProblem<'a> {
    pub model: &'a dyn EnergyModel,
    pub forward: &'a LinearForwardModel,
    pub y: &'a Field,
    pub eta: f64,
}

impl<'a> PosteriorProblem<'a> {
    pub fn new(
        model: &'a dyn EnergyModel,
        forward: &'a LinearForwardModel,
        y: &'a Field,
        eta: f64,
    ) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid(
                "eta",
                "measurement noise std must be positive",
            ));
        }
        y.expect_shape(forward.output_shape())?;
        y.check_finite("measurements")?;
        if model.shape() != forward.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: forward.input_shape().to_vec(),
                found: model.shape().to_vec(),
            });
        }
        Ok(PosteriorProblem {
            model,
            forward,
            y,
            eta,
        })
    }

    fn data_rhs(&self) -> Result<Field> {
        Ok(self
            .forward
            .adjoint(self.y)?
            .scale(1.0 / (self.eta * self.eta)))
    }
}

/// How `B` and `B^{1/2}` are realized in the noise term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    /// Exact, pixel-diagonal; mask operators only.
    ExactDiagonal,
    /// Exact, diagonal in the Fourier basis; blurs and k-space sampling.
    FourierDiagonal,
    /// Exact, through the SVD of a dense operator.
    DenseSpectral,
    /// `diag(AᵀA)` in place of `AᵀA`.
    DiagonalApprox,
    /// `B ≈ t² I`, valid when `η ≫ t`.
    HighNoiseApprox,
}

impl PreconditionerKind {
    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::ExactDiagonal => "exact_diagonal",
            PreconditionerKind::FourierDiagonal => "fourier_diagonal",
            PreconditionerKind::DenseSpectral => "dense_spectral",
            PreconditionerKind::DiagonalApprox => "diagonal_approx",
            PreconditionerKind::HighNoiseApprox => "high_noise_approx",
        }
    }

    /// The exact kind matching the operator's structure.
    pub fn exact_for(forward: &LinearForwardModel) -> Self {
        match forward.structure() {
            ForwardStructure::DiagonalMask { .. } => PreconditionerKind::ExactDiagonal,
            ForwardStructure::Circulant { .. } | ForwardStructure::FourierUndersampling { .. } => {
                PreconditionerKind::FourierDiagonal
            }
            ForwardStructure::Dense { .. } => PreconditionerKind::DenseSpectral,
        }
    }

    pub fn check_compatible(self, forward: &LinearForwardModel) -> Result<()> {
        let ok = match self {
            PreconditionerKind::ExactDiagonal => {
                matches!(forward.structure(), ForwardStructure::DiagonalMask { .. })
            }
            PreconditionerKind::FourierDiagonal => matches!(
                forward.structure(),
                ForwardStructure::Circulant { .. } | ForwardStructure::FourierUndersampling { .. }
            ),
            PreconditionerKind::DenseSpectral => {
                matches!(forward.structure(), ForwardStructure::Dense { .. })
            }
            PreconditionerKind::DiagonalApprox | PreconditionerKind::HighNoiseApprox => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IncompatiblePreconditioner {
                kind: self.name(),
                structure: forward.structure_name(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sample,
    Map,
}

/// Scale of the injected noise: `B^{1/2}ξ` or `√(2B)ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScale {
    Sqrt,
    SqrtTwo,
}

/// Which iterate seeds the next noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carry {
    /// The chain state after the noise draw.
    Noised,
    /// The noise-free data-consistency output `x̃`.
    Denoised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ALPSConfig {
    pub schedule: NoiseSchedule,
    /// Langevin (or MM) steps per noise level.
    pub k: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub preconditioner: PreconditionerKind,
    pub mode: Mode,
    /// Lipschitz constant used by the MM update.
    pub lipschitz: f64,
    pub seed: u64,
    pub noise_scale: NoiseScale,
    pub carry: Carry,
    /// Record `C_t` after every step.
    pub record_trace: bool,
    /// Keep the chain state at the end of every noise level.
    pub keep_trajectory: bool,
}

impl ALPSConfig {
    pub fn new(schedule: NoiseSchedule, preconditioner: PreconditionerKind) -> Self {
        ALPSConfig {
            schedule,
            k: 1,
            cg_iters: 10,
            cg_tol: 1e-6,
            preconditioner,
            mode: Mode::Sample,
            lipschitz: 1.0,
            seed: 0,
            noise_scale: NoiseScale::Sqrt,
            carry: Carry::Noised,
            record_trace: true,
            keep_trajectory: false,
        }
    }

    pub fn validate(&self, forward: &LinearForwardModel) -> Result<()> {
        self.schedule.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.cg_iters == 0 || !(self.cg_tol > 0.0) {
            return Err(Error::invalid("cg", "need cg_iters >= 1 and cg_tol > 0"));
        }
        if !(self.lipschitz > 0.0) || !self.lipschitz.is_finite() {
            return Err(Error::invalid("lipschitz", "must be positive"));
        }
        self.preconditioner.check_compatible(forward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgRecord {
    pub scale: usize,
    pub step: usize,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverWarning {
    CgNotConverged {
        scale: usize,
        step: usize,
        relative_residual: f64,
    },
    /// `C_t` rose between consecutive MM iterates: `L` is too small.
    LipschitzViolation {
        scale: usize,
        step: usize,
        relative_increase: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Noise-free iterate `x̃` of the last step (the MM iterate in MAP mode).
    pub final_x: Field,
    /// Chain state after the last step, including its noise draw.
    pub final_noised: Field,
    /// `C_{t_i}` of the chain state after every step; `N·K` entries.
    pub trace: Vec<f64>,
    pub nfe: usize,
    pub cg_log: Vec<CgRecord>,
    pub warnings: Vec<SolverWarning>,
    /// Chain state at the end of each noise level, if requested.
    pub trajectory: Vec<Field>,
}

/// `C_t(x) = ‖Ax − y‖²/(2η²) + E(x; t)/t²`
pub fn posterior_energy(p: &PosteriorProblem<'_>, x: &Field, t: f64) -> Result<f64> {
    let r = p.forward.apply(x)?.sub(p.y)?;
    Ok(norm2(&r) / (2.0 * p.eta * p.eta) + p.model.energy(x, t)? / (t * t))
}

/// `∇C_t(x) = Aᵀ(Ax − y)/η² + ∇E(x; t)/t²`
pub fn posterior_gradient(p: &PosteriorProblem<'_>, x: &Field, t: f64) -> Result<Field> {
    let r = p.forward.apply(x)?.sub(p.y)?;
    let mut g = p.forward.adjoint(&r)?.scale(1.0 / (p.eta * p.eta));
    g.axpy(1.0 / (t * t), &p.model.grad_energy(x, t)?)?;
    Ok(g)
}

/// `f(AᵀA/η² + I/t²)`-type spectral application shared by the exact kinds.
fn exact_power(p: &PosteriorProblem<'_>, t: f64, v: &Field, power: f64) -> Result<Field> {
    let (e2, t2) = (p.eta * p.eta, t * t);
    if power == 1.0 {
        p.forward
            .gram_function_apply(v, |l| 1.0 / (l / e2 + 1.0 / t2))
    } else if power == 0.5 {
        p.forward
            .gram_function_apply(v, |l| 1.0 / libm::sqrt(l / e2 + 1.0 / t2))
    } else {
        p.forward
            .gram_function_apply(v, |l| libm::pow(l / e2 + 1.0 / t2, -power))
    }
}

fn approx_diagonal(p: &PosteriorProblem<'_>, t: f64, v: &Field, power: f64) -> Result<Field> {
    let (e2, t2) = (p.eta * p.eta, t * t);
    let diag = p.forward.gram_diagonal();
    let out = v
        .as_slice()
        .iter()
        .zip(&diag)
        .map(|(&x, &g)| libm::pow(g / e2 + 1.0 / t2, -power) * x)
        .collect();
    Ok(Field::from_parts(v.shape(), out))
}

fn preconditioner_power(
    p: &PosteriorProblem<'_>,
    t: f64,
    kind: PreconditionerKind,
    v: &Field,
    power: f64,
) -> Result<Field> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", "must be positive"));
    }
    kind.check_compatible(p.forward)?;
    v.expect_shape(p.forward.input_shape())?;
    match kind {
        PreconditionerKind::ExactDiagonal
        | PreconditionerKind::FourierDiagonal
        | PreconditionerKind::DenseSpectral => exact_power(p, t, v, power),
        PreconditionerKind::DiagonalApprox => approx_diagonal(p, t, v, power),
        PreconditionerKind::HighNoiseApprox => Ok(v.scale(libm::pow(t, 2.0 * power))),
    }
}

/// `B v`
pub fn preconditioner_apply(
    p: &PosteriorProblem<'_>,
    t: f64,
    kind: PreconditionerKind,
    v: &Field,
) -> Result<Field> {
    preconditioner_power(p, t, kind, v, 1.0)
}

/// `B^{1/2} v`
pub fn preconditioner_sqrt_apply(
    p: &PosteriorProblem<'_>,
    t: f64,
    kind: PreconditionerKind,
    v: &Field,
) -> Result<Field> {
    preconditioner_power(p, t, kind, v, 0.5)
}

/// Mean `B_max Aᵀy/η²` of the Gaussian posterior under an `N(0, σ_max² I)` prior.
pub fn init_mean(p: &PosteriorProblem<'_>, sigma_max: f64) -> Result<Field> {
    exact_power(p, sigma_max, &p.data_rhs()?, 1.0)
}

/// Draw from the Gaussian posterior under an `N(0, σ_max² I)` prior.
pub fn init_sample<R: Rng + ?Sized>(
    p: &PosteriorProblem<'_>,
    sigma_max: f64,
    rng: &mut R,
) -> Result<Field> {
    if !(sigma_max > 0.0) {
        return Err(Error::invalid("sigma_max", "must be positive"));
    }
    let mean = init_mean(p, sigma_max)?;
    let xi = normal_field(rng, p.forward.input_shape());
    mean.add(&exact_power(p, sigma_max, &xi, 0.5)?)
}

/// Solves `(AᵀA/η² + (w/t²) I) x = Aᵀy/η² + v/t²` by CG, started from the
/// spectral solution through the operator's eigenbasis so that CG only has
/// to confirm (or polish) it.
fn data_consistency(
    p: &PosteriorProblem<'_>,
    t: f64,
    identity_weight: f64,
    v: &Field,
    cfg: &ALPSConfig,
) -> Result<CgOutcome> {
    let (e2, t2) = (p.eta * p.eta, t * t);
    let op = p
        .forward
        .normal_plus_identity(1.0 / e2, identity_weight / t2)?;
    let mut rhs = p.data_rhs()?;
    rhs.axpy(1.0 / t2, v)?;
    let w = identity_weight / t2;
    let x0 = p
        .forward
        .gram_function_apply(&rhs, |l| 1.0 / (l / e2 + w))?;
    cg_solve(&op, &rhs, &x0, cfg.cg_tol, cfg.cg_iters)
}

/// Output of one Langevin step.
#[derive(Debug, Clone)]
pub struct LangevinStep {
    /// `x_{k+1}` (equal to `x̃` in MAP mode).
    pub x_next: Field,
    /// Denoiser output `d_k`.
    pub denoised: Field,
    /// Data-consistency solution `x̃_{k+1}`.
    pub x_tilde: Field,
    pub cg: CgOutcome,
}

pub fn langevin_step<R: Rng + ?Sized>(
    p: &PosteriorProblem<'_>,
    x: &Field,
    t: f64,
    cfg: &ALPSConfig,
    rng: &mut R,
) -> Result<LangevinStep> {
    let d = p.model.denoise(x, t)?;
    let cg = data_consistency(p, t, 1.0, &d, cfg)?;
    let x_tilde = cg.x.clone();
    let x_next = match cfg.mode {
        Mode::Map => x_tilde.clone(),
        Mode::Sample => {
            let xi = normal_field(rng, x.shape());
            let mut noise = preconditioner_sqrt_apply(p, t, cfg.preconditioner, &xi)?;
            if cfg.noise_scale == NoiseScale::SqrtTwo {
                noise = noise.scale(core::f64::consts::SQRT_2);
            }
            x_tilde.add(&noise)?
        }
    };
    Ok(LangevinStep {
        x_next,
        denoised: d,
        x_tilde,
        cg,
    })
}

/// Langevin step with the noise term replaced by isotropic `t·ξ`.
pub fn high_noise_step<R: Rng + ?Sized>(
    p: &PosteriorProblem<'_>,
    x: &Field,
    t: f64,
    cfg: &ALPSConfig,
    rng: &mut R,
) -> Result<LangevinStep> {
    let cfg = ALPSConfig {
        preconditioner: PreconditionerKind::HighNoiseApprox,
        mode: Mode::Sample,
        ..cfg.clone()
    };
    langevin_step(p, x, t, &cfg, rng)
}

/// One MM update `(AᵀA/η² + L I/t²)⁻¹ (Aᵀy/η² + (L x − ∇E(x; t))/t²)`.
pub fn mm_step(p: &PosteriorProblem<'_>, x: &Field, t: f64, cfg: &ALPSConfig) -> Result<CgOutcome> {
    let g = p.model.grad_energy(x, t)?;
    let l = cfg.lipschitz;
    let v = x.zip_map(&g, |a, b| l * a - b)?;
    data_consistency(p, t, l, &v, cfg)
}

fn record_cg(result: &mut SolveResult, scale: usize, step: usize, cg: &CgOutcome) {
    result.cg_log.push(CgRecord {
        scale,
        step,
        iterations: cg.iterations,
        relative_residual: cg.relative_residual,
        converged: cg.converged,
    });
    if !cg.converged {
        result.warnings.push(SolverWarning::CgNotConverged {
            scale,
            step,
            relative_residual: cg.relative_residual,
        });
    }
}

fn empty_result(x: &Field) -> SolveResult {
    SolveResult {
        final_x: x.clone(),
        final_noised: x.clone(),
        trace: Vec::new(),
        nfe: 0,
        cg_log: Vec::new(),
        warnings: Vec::new(),
        trajectory: Vec::new(),
    }
}

/// Annealed Langevin posterior sampling for chain `chain`, whose random
/// stream is derived from `cfg.seed` and the chain index.
pub fn alps_solve_chain(
    p: &PosteriorProblem<'_>,
    cfg: &ALPSConfig,
    chain: u64,
) -> Result<SolveResult> {
    if cfg.mode != Mode::Sample {
        return Err(Error::InvalidMode("alps_solve needs mode = sample"));
    }
    cfg.validate(p.forward)?;
    let mut rng = chain_rng(cfg.seed, chain);
    let levels = cfg.schedule.levels();
    let mut x = init_sample(p, cfg.schedule.sigma_max, &mut rng)?;
    let mut result = empty_result(&x);
    for (i, &t) in levels.iter().enumerate() {
        for k in 0..cfg.k {
            let step = langevin_step(p, &x, t, cfg, &mut rng)?;
            result.nfe += 1;
            record_cg(&mut result, i, k, &step.cg);
            x = match cfg.carry {
                Carry::Noised => step.x_next.clone(),
                Carry::Denoised if k + 1 == cfg.k => step.x_tilde.clone(),
                Carry::Denoised => step.x_next.clone(),
            };
            if cfg.record_trace {
                result.trace.push(posterior_energy(p, &step.x_next, t)?);
            }
            result.final_x = step.x_tilde;
            result.final_noised = step.x_next;
        }
        if cfg.keep_trajectory {
            result.trajectory.push(x.clone());
        }
    }
    Ok(result)
}

/// [`alps_solve_chain`] for chain 0.
pub fn alps_solve(p: &PosteriorProblem<'_>, cfg: &ALPSConfig) -> Result<SolveResult> {
    alps_solve_chain(p, cfg, 0)
}

/// Annealed MM descent from the `σ_max` posterior mean.
pub fn map_solve(p: &PosteriorProblem<'_>, cfg: &ALPSConfig) -> Result<SolveResult> {
    if cfg.mode != Mode::Map {
        return Err(Error::InvalidMode("map_solve needs mode = map"));
    }
    cfg.validate(p.forward)?;
    let levels = cfg.schedule.levels();
    let mut x = init_mean(p, cfg.schedule.sigma_max)?;
    let mut result = empty_result(&x);
    for (i, &t) in levels.iter().enumerate() {
        let mut c_prev = posterior_energy(p, &x, t)?;
        for k in 0..cfg.k {
            let cg = mm_step(p, &x, t, cfg)?;
            result.nfe += 1;
            record_cg(&mut result, i, k, &cg);
            x = cg.x;
            let c = posterior_energy(p, &x, t)?;
            let increase = (c - c_prev) / c_prev.abs().max(f64::MIN_POSITIVE);
            if increase > 1e-9 {
                result.warnings.push(SolverWarning::LipschitzViolation {
                    scale: i,
                    step: k,
                    relative_increase: increase,
                });
            }
            if cfg.record_trace {
                result.trace.push(c);
            }
            c_prev = c;
        }
        if cfg.keep_trajectory {
            result.trajectory.push(x.clone());
        }
    }
    result.final_x = x.clone();
    result.final_noised = x;
    Ok(result)
}

/// Dispatches on `cfg.mode`.
pub fn solve(p: &PosteriorProblem<'_>, cfg: &ALPSConfig, chain: u64) -> Result<SolveResult> {
    match cfg.mode {
        Mode::Sample => alps_solve_chain(p, cfg, chain),
        Mode::Map => map_solve(p, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{Covariance, GaussianEBM};
    use crate::forward::gaussian_kernel;
    use crate::linalg::Matrix;
    use crate::rng::standard_normal;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ZeroEnergy(Vec<usize>);

    impl EnergyModel for ZeroEnergy {
        fn shape(&self) -> &[usize] {
            &self.0
        }
        fn energy(&self, _: &Field, _: f64) -> Result<f64> {
            Ok(0.0)
        }
        fn grad_energy(&self, x: &Field, _: f64) -> Result<Field> {
            Ok(Field::zeros(x.shape()))
        }
    }

    fn mask_of(bits: &[u8]) -> LinearForwardModel {
        LinearForwardModel::mask(
            &Field::from_vec(bits.iter().map(|&b| b as f64).collect()).unwrap(),
        )
        .unwrap()
    }

    fn field(v: &[f64]) -> Field {
        Field::from_slice(v).unwrap()
    }

    fn cfg(n: usize, kind: PreconditionerKind) -> ALPSConfig {
        let mut c = ALPSConfig::new(NoiseSchedule::new(10.0, 0.01, 5.0, n).unwrap(), kind);
        c.cg_iters = 200;
        c.cg_tol = 1e-12;
        c
    }

    #[test]
    fn posterior_energy_substitutions() {
        let x = field(&[0.3, -1.0]);
        let id = LinearForwardModel::identity(&[2]);
        let zero = ZeroEnergy(vec![2]);
        let p = PosteriorProblem::new(&zero, &id, &x, 0.1).unwrap();
        assert_eq!(posterior_energy(&p, &x, 1.0).unwrap(), 0.0);

        let g = GaussianEBM::isotropic(&[1], 1.0).unwrap();
        let a = LinearForwardModel::identity(&[1]);
        let y = field(&[0.0]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        assert!((posterior_energy(&p, &field(&[1.0]), 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(PosteriorProblem::new(&g, &a, &y, 0.0).is_err());
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..12).map(|_| standard_normal(&mut rng)).collect();
        let a = LinearForwardModel::dense(Matrix::new(3, 4, data).unwrap()).unwrap();
        let g = GaussianEBM::isotropic(&[4], 0.7).unwrap();
        let y = field(&[0.2, -0.4, 1.0]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.5).unwrap();
        let x = field(&[0.1, 0.5, -0.3, 0.9]);
        let t = 0.4;
        let grad = posterior_gradient(&p, &x, t).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (posterior_energy(&p, &xp, t).unwrap()
                - posterior_energy(&p, &xm, t).unwrap())
                / (2.0 * h);
            assert!((fd - grad.as_slice()[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn init_without_measurements_is_the_wide_prior() {
        let a = LinearForwardModel::zero(&[4]);
        let g = GaussianEBM::isotropic(&[4], 1.0).unwrap();
        let y = Field::zeros(&[4]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 10_000;
        let draws: Vec<Field> = (0..m)
            .map(|_| init_sample(&p, 10.0, &mut rng).unwrap())
            .collect();
        for j in 0..4 {
            let v: Vec<f64> = draws.iter().map(|d| d.as_slice()[j]).collect();
            let mean = v.iter().sum::<f64>() / m as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
            assert!(mean.abs() < 0.4);
            assert!((sd / 10.0 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn init_for_inpainting_matches_diagonal_closed_form() {
        let a = mask_of(&[1, 0, 1, 0]);
        let g = GaussianEBM::isotropic(&[4], 1.0).unwrap();
        let y = field(&[0.5, 0.0, -0.25, 0.0]);
        let (eta, smax) = (0.01, 10.0);
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let mean = init_mean(&p, smax).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 10_000;
        let draws: Vec<Field> = (0..m)
            .map(|_| init_sample(&p, smax, &mut rng).unwrap())
            .collect();
        for j in 0..4 {
            let mj = [1.0, 0.0, 1.0, 0.0][j];
            let var = 1.0 / (mj / (eta * eta) + 1.0 / (smax * smax));
            let expect_mean = var * mj * y.as_slice()[j] / (eta * eta);
            assert!((mean.as_slice()[j] - expect_mean).abs() < 1e-12);
            let v: Vec<f64> = draws.iter().map(|d| d.as_slice()[j]).collect();
            let mu = v.iter().sum::<f64>() / m as f64;
            let sd = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
            assert!((sd / var.sqrt() - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn init_mean_tends_to_the_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..128).map(|_| standard_normal(&mut rng)).collect();
        let a = LinearForwardModel::dense(Matrix::new(8, 16, data.clone()).unwrap()).unwrap();
        let g = GaussianEBM::isotropic(&[16], 1.0).unwrap();
        let y = Field::from_vec((0..8).map(|_| standard_normal(&mut rng)).collect()).unwrap();
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let pinv = nalgebra::DMatrix::from_row_slice(8, 16, &data)
            .pseudo_inverse(1e-12)
            .unwrap();
        let expect = pinv * nalgebra::DVector::from_column_slice(y.as_slice());
        let err = |smax: f64| {
            let mean = init_mean(&p, smax).unwrap();
            let d: f64 = mean
                .as_slice()
                .iter()
                .zip(expect.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d.sqrt() / expect.norm()
        };
        // the gap shrinks like 1/σ_max² until rounding takes over
        let (e1, e2, e3) = (err(10.0), err(100.0), err(1e4));
        assert!(e2 < e1 / 50.0 && e3 < 1e-6, "{e1} {e2} {e3}");
    }

    #[test]
    fn inpainting_preconditioner_entries() {
        let a = mask_of(&[1, 0]);
        let g = GaussianEBM::isotropic(&[2], 1.0).unwrap();
        let y = Field::zeros(&[2]);
        let (eta, t) = (0.3, 0.7);
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let b = preconditioner_apply(
            &p,
            t,
            PreconditionerKind::ExactDiagonal,
            &field(&[1.0, 1.0]),
        )
        .unwrap();
        let kept = eta * eta * t * t / (eta * eta + t * t);
        assert!((b.as_slice()[0] - kept).abs() < 1e-15);
        assert!((b.as_slice()[1] - t * t).abs() < 1e-15);
    }

    #[test]
    fn circulant_preconditioner_matches_dense_inverse() {
        let shape = [16, 16];
        let a = LinearForwardModel::circulant(&gaussian_kernel(&shape, 1.0).unwrap()).unwrap();
        let g = GaussianEBM::isotropic(&shape, 1.0).unwrap();
        let y = Field::zeros(&shape);
        let (eta, t) = (0.1, 0.5);
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let n = 256;
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = Field::zeros(&shape);
                e.data_mut()[j] = 1.0;
                a.apply(&e).unwrap().into_vec()
            })
            .collect();
        let am = nalgebra::DMatrix::from_fn(n, n, |r, c| cols[c][r]);
        let binv = am.transpose() * &am / (eta * eta) + nalgebra::DMatrix::identity(n, n) / (t * t);
        let b = binv.try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = normal_field(&mut rng, &shape);
        let ours = preconditioner_apply(&p, t, PreconditionerKind::FourierDiagonal, &v).unwrap();
        let expect = b * nalgebra::DVector::from_column_slice(v.as_slice());
        for (x, e) in ours.as_slice().iter().zip(expect.iter()) {
            assert!((x - e).abs() < 1e-10);
        }
        assert!(matches!(
            preconditioner_apply(&p, t, PreconditionerKind::ExactDiagonal, &v),
            Err(Error::IncompatiblePreconditioner { .. })
        ));
    }

    #[test]
    fn square_root_squares_to_the_preconditioner() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dense =
            Matrix::new(8, 16, (0..128).map(|_| standard_normal(&mut rng)).collect()).unwrap();
        let ops = [
            LinearForwardModel::mask(
                &Field::from_vec((0..16).map(|i| (i % 3 == 0) as u8 as f64).collect())
                    .unwrap()
                    .reshaped(&[4, 4])
                    .unwrap(),
            )
            .unwrap(),
            LinearForwardModel::circulant(&gaussian_kernel(&[4, 4], 0.8).unwrap()).unwrap(),
            LinearForwardModel::dense_with_shape(dense, &[4, 4]).unwrap(),
        ];
        let g = GaussianEBM::isotropic(&[4, 4], 1.0).unwrap();
        for a in &ops {
            let y = Field::zeros(a.output_shape());
            let p = PosteriorProblem::new(&g, a, &y, 0.2).unwrap();
            let kinds = [
                PreconditionerKind::exact_for(a),
                PreconditionerKind::DiagonalApprox,
                PreconditionerKind::HighNoiseApprox,
            ];
            for kind in kinds {
                let v = normal_field(&mut rng, &[4, 4]);
                let twice = preconditioner_sqrt_apply(
                    &p,
                    0.3,
                    kind,
                    &preconditioner_sqrt_apply(&p, 0.3, kind, &v).unwrap(),
                )
                .unwrap();
                let once = preconditioner_apply(&p, 0.3, kind, &v).unwrap();
                for (x, e) in twice.as_slice().iter().zip(once.as_slice()) {
                    assert!((x - e).abs() < 1e-10 * e.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn langevin_without_measurements_is_denoise_plus_noise() {
        let a = LinearForwardModel::zero(&[3]);
        let g = GaussianEBM::isotropic(&[3], 0.5).unwrap();
        let y = Field::zeros(&[3]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let c = cfg(10, PreconditionerKind::ExactDiagonal);
        let x = field(&[1.0, -2.0, 0.3]);
        let t = 0.8;
        let step = langevin_step(&p, &x, t, &c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let xi = normal_field(&mut ChaCha8Rng::seed_from_u64(7), &[3]);
        let d = g.denoise(&x, t).unwrap();
        for j in 0..3 {
            let expect = d.as_slice()[j] + t * xi.as_slice()[j];
            assert!((step.x_next.as_slice()[j] - expect).abs() < 1e-12);
        }
        let hn = high_noise_step(&p, &x, t, &c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        for (u, v) in hn.x_next.as_slice().iter().zip(step.x_next.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_samples_the_gaussian_conditional() {
        let a = mask_of(&[1, 0, 1]);
        let g = GaussianEBM::isotropic(&[3], 1.0).unwrap();
        let y = field(&[0.4, 0.0, -0.6]);
        let (eta, t) = (0.3, 0.5);
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let c = cfg(10, PreconditionerKind::ExactDiagonal);
        let x = field(&[1.0, 1.5, -1.0]);
        let d = g.denoise(&x, t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 10_000;
        let draws: Vec<Field> = (0..m)
            .map(|_| langevin_step(&p, &x, t, &c, &mut rng).unwrap().x_next)
            .collect();
        for j in 0..3 {
            let mj = [1.0, 0.0, 1.0][j];
            let b = 1.0 / (mj / (eta * eta) + 1.0 / (t * t));
            let mean = b * (mj * y.as_slice()[j] / (eta * eta) + d.as_slice()[j] / (t * t));
            let v: Vec<f64> = draws.iter().map(|s| s.as_slice()[j]).collect();
            let mu = v.iter().sum::<f64>() / m as f64;
            let var = v.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!((mu - mean).abs() < 0.02 * b.sqrt().max(mean.abs()));
            assert!((var / b - 1.0).abs() < 0.04);
        }
    }

    #[test]
    fn data_consistency_equals_preconditioned_gradient_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = LinearForwardModel::circulant(&gaussian_kernel(&[8, 8], 1.2).unwrap()).unwrap();
        let g = GaussianEBM::isotropic(&[8, 8], 0.6).unwrap();
        let y = normal_field(&mut rng, &[8, 8]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.2).unwrap();
        let c = cfg(10, PreconditionerKind::FourierDiagonal);
        for _ in 0..5 {
            let x = normal_field(&mut rng, &[8, 8]);
            let t = 0.3;
            let grad = posterior_gradient(&p, &x, t).unwrap();
            let lhs = x
                .sub(&preconditioner_apply(&p, t, c.preconditioner, &grad).unwrap())
                .unwrap();
            let d = g.denoise(&x, t).unwrap();
            let mut rhs = a.adjoint(&y).unwrap().scale(1.0 / 0.04);
            rhs.axpy(1.0 / (t * t), &d).unwrap();
            let rhs = preconditioner_apply(&p, t, c.preconditioner, &rhs).unwrap();
            let step = langevin_step(&p, &x, t, &c, &mut rng).unwrap();
            for ((l, r), s) in lhs
                .as_slice()
                .iter()
                .zip(rhs.as_slice())
                .zip(step.x_tilde.as_slice())
            {
                assert!((l - r).abs() < 1e-10 * r.abs().max(1.0));
                assert!((s - r).abs() < 1e-9 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mm_with_unit_lipschitz_is_the_langevin_mean_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = LinearForwardModel::circulant(&gaussian_kernel(&[8, 8], 1.0).unwrap()).unwrap();
        let g = GaussianEBM::isotropic(&[8, 8], 0.6).unwrap();
        let y = normal_field(&mut rng, &[8, 8]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.1).unwrap();
        let mut c = cfg(10, PreconditionerKind::FourierDiagonal);
        c.cg_iters = 10;
        c.cg_tol = 1e-6;
        let x = normal_field(&mut rng, &[8, 8]);
        let mm = mm_step(&p, &x, 0.4, &c).unwrap();
        let lv = langevin_step(&p, &x, 0.4, &c, &mut rng).unwrap();
        assert_eq!(mm.x, lv.x_tilde);
    }

    fn correlated_prior(n: usize) -> GaussianEBM {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| 0.8 * 0.6f64.powi((i as i32 - j as i32).abs()))
                    .collect()
            })
            .collect();
        let mean = Field::from_vec((0..n).map(|i| 0.1 * i as f64).collect()).unwrap();
        GaussianEBM::new(
            mean,
            Covariance::dense(Matrix::from_rows(&rows).unwrap()).unwrap(),
        )
        .unwrap()
    }

    /// Mode of `C_t` for a Gaussian prior: solve `(AᵀA/η² + (Σ+t²I)⁻¹) x = Aᵀy/η² + (Σ+t²I)⁻¹μ`.
    fn gaussian_mode(
        g: &GaussianEBM,
        a: &nalgebra::DMatrix<f64>,
        y: &[f64],
        eta: f64,
        t: f64,
    ) -> nalgebra::DVector<f64> {
        let n = g.dim();
        let sigma = nalgebra::DMatrix::from_row_slice(n, n, g.covariance().to_matrix().as_slice());
        let pinv = (sigma + nalgebra::DMatrix::identity(n, n) * (t * t))
            .try_inverse()
            .unwrap();
        let mu = nalgebra::DVector::from_column_slice(g.mean().as_slice());
        let lhs = a.transpose() * a / (eta * eta) + &pinv;
        let rhs = a.transpose() * nalgebra::DVector::from_column_slice(y) / (eta * eta) + pinv * mu;
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn mm_converges_to_the_gaussian_mode_at_fixed_t() {
        let g = correlated_prior(6);
        let a = mask_of(&[1, 0, 1, 1, 0, 1]);
        let y = field(&[0.5, 0.0, -0.2, 0.9, 0.0, 0.1]);
        let (eta, t) = (0.1, 0.5);
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let c = cfg(10, PreconditionerKind::ExactDiagonal);
        let mut x = init_mean(&p, 10.0).unwrap();
        for _ in 0..50 {
            x = mm_step(&p, &x, t, &c).unwrap().x;
        }
        let am = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1.0, 0.0, 1.0, 1.0, 0.0, 1.0,
        ]));
        let mode = gaussian_mode(&g, &am, y.as_slice(), eta, t);
        let err = x
            .as_slice()
            .iter()
            .zip(mode.iter())
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-6 * mode.norm(), "{err}");
    }

    #[test]
    fn map_trace_is_monotone_within_each_scale() {
        let g = correlated_prior(6);
        let a = mask_of(&[1, 0, 1, 1, 0, 1]);
        let y = field(&[0.5, 0.0, -0.2, 0.9, 0.0, 0.1]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.1).unwrap();
        let mut c = cfg(20, PreconditionerKind::ExactDiagonal);
        c.mode = Mode::Map;
        c.k = 5;
        let r = map_solve(&p, &c).unwrap();
        assert_eq!(r.trace.len(), 100);
        assert_eq!(r.nfe, 100);
        for block in r.trace.chunks(5) {
            for w in block.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12);
            }
        }
        assert!(r.warnings.is_empty());
        assert!(alps_solve(&p, &c).is_err());
    }

    #[test]
    fn too_small_lipschitz_constant_is_flagged() {
        let g = GaussianEBM::new(
            Field::filled(&[2], 0.5),
            Covariance::isotropic(2, 1e-3).unwrap(),
        )
        .unwrap();
        let a = mask_of(&[1, 0]);
        let y = field(&[0.5, 0.0]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.1).unwrap();
        let mut c = cfg(5, PreconditionerKind::ExactDiagonal);
        c.mode = Mode::Map;
        c.k = 3;
        c.lipschitz = 0.05;
        let r = map_solve(&p, &c).unwrap();
        assert!(r
            .warnings
            .iter()
            .any(|w| matches!(w, SolverWarning::LipschitzViolation { .. })));
    }

    #[test]
    fn high_noise_approximation_error() {
        let a = mask_of(&[1, 0]);
        let g = GaussianEBM::isotropic(&[2], 1.0).unwrap();
        let y = Field::zeros(&[2]);
        let ones = field(&[1.0, 1.0]);
        for (eta, t, ratio) in [(10.0, 0.1, 1.0), (0.5, 0.5, 2f64.sqrt())] {
            let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
            let exact =
                preconditioner_sqrt_apply(&p, t, PreconditionerKind::ExactDiagonal, &ones).unwrap();
            let approx =
                preconditioner_sqrt_apply(&p, t, PreconditionerKind::HighNoiseApprox, &ones)
                    .unwrap();
            let r = approx.as_slice()[0] / exact.as_slice()[0];
            assert!((r - ratio).abs() < 0.01 * ratio);
            assert_eq!(approx.as_slice()[1], exact.as_slice()[1]);
        }
    }

    #[test]
    fn nfe_determinism_and_carry() {
        let a = mask_of(&[1, 0, 1, 0]);
        let g = GaussianEBM::isotropic(&[4], 1.0).unwrap();
        let y = field(&[0.3, 0.0, -0.3, 0.0]);
        let p = PosteriorProblem::new(&g, &a, &y, 0.01).unwrap();
        let mut c = cfg(50, PreconditionerKind::ExactDiagonal);
        c.seed = 77;
        let r1 = alps_solve(&p, &c).unwrap();
        let r2 = alps_solve(&p, &c).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.nfe, 50);
        assert_eq!(r1.trace.len(), 50);
        assert!(r1.trace.iter().all(|v| v.is_finite()));
        assert_ne!(alps_solve_chain(&p, &c, 1).unwrap().final_x, r1.final_x);
    }

    /// Exact first two moments of the chain for an independent-coordinate
    /// Gaussian prior and a mask: every step is an affine map plus noise.
    fn chain_moments(
        prior_var: f64,
        prior_mean: f64,
        m: f64,
        y: f64,
        eta: f64,
        cfg: &ALPSConfig,
    ) -> (f64, f64) {
        let e2 = eta * eta;
        let smax = cfg.schedule.sigma_max;
        let b0 = 1.0 / (m / e2 + 1.0 / (smax * smax));
        let (mut mean, mut var) = (b0 * m * y / e2, b0);
        let (mut out_mean, mut out_var) = (mean, var);
        for t in cfg.schedule.levels() {
            let t2 = t * t;
            let c = prior_var / (prior_var + t2);
            let b = 1.0 / (m / e2 + 1.0 / t2);
            for _ in 0..cfg.k {
                let gain = b * c / t2;
                let m_tilde = b * (m * y / e2 + (c * mean + (1.0 - c) * prior_mean) / t2);
                let v_tilde = gain * gain * var;
                out_mean = m_tilde;
                out_var = v_tilde;
                mean = m_tilde;
                var = v_tilde + b;
            }
        }
        (out_mean, out_var)
    }

    #[test]
    fn chain_matches_exact_moment_recursion() {
        let bits = [1u8, 0, 1, 0];
        let a = mask_of(&bits);
        let prior_mean = Field::filled(&[4], 0.2);
        let g = GaussianEBM::new(
            prior_mean,
            Covariance::diagonal(vec![0.5, 0.5, 2.0, 2.0]).unwrap(),
        )
        .unwrap();
        let y = field(&[0.7, 0.0, -0.4, 0.0]);
        let eta = 0.3;
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let mut c = cfg(12, PreconditionerKind::ExactDiagonal);
        c.k = 2;
        c.record_trace = false;
        let m = 4000;
        let finals: Vec<Field> = (0..m)
            .map(|i| alps_solve_chain(&p, &c, i).unwrap().final_x)
            .collect();
        for j in 0..4 {
            let pv = [0.5, 0.5, 2.0, 2.0][j];
            let (mu, var) = chain_moments(pv, 0.2, bits[j] as f64, y.as_slice()[j], eta, &c);
            let v: Vec<f64> = finals.iter().map(|f| f.as_slice()[j]).collect();
            let emp_mu = v.iter().sum::<f64>() / m as f64;
            let emp_var = v.iter().map(|s| (s - emp_mu).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!(
                (emp_mu - mu).abs() < 4.0 * (var / m as f64).sqrt(),
                "coord {j}: {emp_mu} vs {mu}"
            );
            assert!(
                (emp_var / var - 1.0).abs() < 4.0 * (2.0 / m as f64).sqrt(),
                "coord {j}: {emp_var} vs {var}"
            );
        }
    }
}
