//! Denoising score matching and score distillation for [`NeuralEBM`].
//!
//! Both objectives regress the energy denoiser `D̃ = x − ∇E` onto a target:
//! the clean sample for score matching, a teacher denoiser's output for
//! distillation. Because `D̃` contains a vector-Jacobian product, parameter
//! gradients are second order; see [`NeuralEBM::regression_loss_and_grad`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::energy::{EnergyModel, NeuralEBM};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::rng::{normal_field, standard_normal};

/// Log-normal noise-level law `ln t ~ N(p_mean, p_std²)`, clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLaw {
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseLaw {
    fn default() -> Self {
        NoiseLaw {
            p_mean: -1.2,
            p_std: 1.2,
            sigma_min: 0.002,
            sigma_max: 80.0,
        }
    }
}

impl NoiseLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_std >= 0.0) || !self.p_mean.is_finite() {
            return Err(Error::invalid(
                "noise law",
                "p_std must be >= 0 and p_mean finite",
            ));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min && self.sigma_max.is_finite())
        {
            return Err(Error::invalid(
                "noise law",
                "need 0 < sigma_min <= sigma_max",
            ));
        }
        Ok(())
    }
}

pub fn sample_noise_level<R: Rng + ?Sized>(rng: &mut R, law: &NoiseLaw) -> f64 {
    let ln_t = law.p_mean + law.p_std * standard_normal(rng);
    libm::exp(ln_t).clamp(law.sigma_min, law.sigma_max)
}

/// `w(t) = (σ_d² + t²) / (t·σ_d)²`
pub fn loss_weight(t: f64, sigma_data: f64) -> f64 {
    (sigma_data * sigma_data + t * t) / (t * t * sigma_data * sigma_data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::LengthMismatch {
            shape: vec![params.len()],
            len: grads.len(),
        });
    }
    state.step += 1;
    let b1t = 1.0 - libm::pow(hp.beta1, state.step as f64);
    let b2t = 1.0 - libm::pow(hp.beta2, state.step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        params[i] -= lr * m_hat / (libm::sqrt(v_hat) + hp.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub noise: NoiseLaw,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            steps: 2000,
            learning_rate: 0.005,
            adam: AdamParams::default(),
            noise: NoiseLaw::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::invalid("adam", "need betas in [0, 1) and eps > 0"));
        }
        self.noise.validate()?;
        if !(self.noise.p_std > 0.0) {
            return Err(Error::invalid("noise.p_std", "must be positive"));
        }
        Ok(())
    }
}

/// Regression target for distillation.
pub trait TeacherDenoiser: Send + Sync {
    fn denoise_teacher(&self, x: &Field, t: f64) -> Result<Field>;
}

/// Uses an energy model's Tweedie denoiser as the teacher.
#[derive(Debug, Clone, Copy)]
pub struct EnergyTeacher<'a, M: ?Sized>(pub &'a M);

impl<M: EnergyModel + ?Sized> TeacherDenoiser for EnergyTeacher<'_, M> {
    fn denoise_teacher(&self, x: &Field, t: f64) -> Result<Field> {
        self.0.denoise(x, t)
    }
}

/// One noisy regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionItem {
    pub noisy: Field,
    pub t: f64,
    pub target: Field,
}

/// Draws `t` then `z` for each clean sample in order and forms `x + t·z`.
fn noisy_inputs<R: Rng + ?Sized>(
    batch: &[Field],
    law: &NoiseLaw,
    rng: &mut R,
) -> Result<Vec<(Field, f64)>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must not be empty"));
    }
    law.validate()?;
    Ok(batch
        .iter()
        .map(|x| {
            let t = sample_noise_level(rng, law);
            let z = normal_field(rng, x.shape());
            let noisy = x.zip_map(&z, |a, b| a + t * b).expect("same shape");
            (noisy, t)
        })
        .collect())
}

pub fn prepare_dsm<R: Rng + ?Sized>(
    batch: &[Field],
    law: &NoiseLaw,
    rng: &mut R,
) -> Result<Vec<RegressionItem>> {
    Ok(noisy_inputs(batch, law, rng)?
        .into_iter()
        .zip(batch)
        .map(|((noisy, t), x)| RegressionItem {
            noisy,
            t,
            target: x.clone(),
        })
        .collect())
}

pub fn prepare_distill<R: Rng + ?Sized>(
    teacher: &(impl TeacherDenoiser + ?Sized),
    batch: &[Field],
    law: &NoiseLaw,
    rng: &mut R,
) -> Result<Vec<RegressionItem>> {
    noisy_inputs(batch, law, rng)?
        .into_iter()
        .map(|(noisy, t)| {
            let target = teacher.denoise_teacher(&noisy, t)?;
            target.same_shape(&noisy)?;
            Ok(RegressionItem { noisy, t, target })
        })
        .collect()
}

/// Weighted loss and parameter gradient of item `index`.
pub fn item_loss_and_grad(
    model: &NeuralEBM,
    item: &RegressionItem,
    index: usize,
) -> Result<(f64, Vec<f64>)> {
    let w = loss_weight(item.t, model.sigma_data());
    model
        .regression_loss_and_grad(&item.noisy, item.t, &item.target, w)
        .map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: "training loss (index is the batch sample)",
                index,
            },
            other => other,
        })
}

/// Mean of per-item losses and gradients, summed in item order.
pub fn reduce_mean(results: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let m = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grad) = iter.next().unwrap_or((0.0, Vec::new()));
    for (l, g) in iter {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= m);
    (loss / m, grad)
}

pub fn batch_loss_and_grad(model: &NeuralEBM, items: &[RegressionItem]) -> Result<(f64, Vec<f64>)> {
    let results = items
        .iter()
        .enumerate()
        .map(|(i, item)| item_loss_and_grad(model, item, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_mean(results))
}

/// Score-matching loss `mean w(t)‖D̃(x + t z; t) − x‖²` and its gradient.
pub fn dsm_loss<R: Rng + ?Sized>(
    model: &NeuralEBM,
    batch: &[Field],
    law: &NoiseLaw,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    batch_loss_and_grad(model, &prepare_dsm(batch, law, rng)?)
}

/// Distillation loss `mean w(t)‖D̃(x̃; t) − D_teacher(x̃; t)‖²` and its gradient.
pub fn distill_loss<R: Rng + ?Sized>(
    student: &NeuralEBM,
    teacher: &(impl TeacherDenoiser + ?Sized),
    batch: &[Field],
    law: &NoiseLaw,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    batch_loss_and_grad(student, &prepare_distill(teacher, batch, law, rng)?)
}

/// Minibatch drawn uniformly with replacement.
pub fn draw_batch<R: Rng + ?Sized>(data: &[Field], size: usize, rng: &mut R) -> Vec<Field> {
    (0..size)
        .map(|_| data[rng.random_range(0..data.len())].clone())
        .collect()
}

/// Sequential training loop; `on_step(step, loss)` runs after every update.
pub fn train<R: Rng + ?Sized>(
    model: &mut NeuralEBM,
    data: &[Field],
    teacher: Option<&dyn TeacherDenoiser>,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_step: impl FnMut(usize, f64),
) -> Result<AdamState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data", "must not be empty"));
    }
    let mut state = AdamState::new(model.mlp().num_params());
    for step in 0..cfg.steps {
        let batch = draw_batch(data, cfg.batch_size, rng);
        let items = match teacher {
            Some(t) => prepare_distill(t, &batch, &cfg.noise, rng)?,
            None => prepare_dsm(&batch, &cfg.noise, rng)?,
        };
        let (loss, grad) = batch_loss_and_grad(model, &items)?;
        adam_step(
            model.mlp_mut().params_mut(),
            &grad,
            &mut state,
            cfg.learning_rate,
            &cfg.adam,
        )?;
        on_step(step, loss);
    }
    Ok(state)
}
