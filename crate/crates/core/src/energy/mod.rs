//! Multi-scale energy models `E(x; t)`.
//!
//! The noise-convolved prior is `p_t(x) ∝ exp(−E(x; t) / t²)`, so the score is
//! `∇ log p_t = −∇E / t²` and the Tweedie denoiser is `x − ∇E(x; t)`.

mod gaussian;
mod mixture;
mod neural;

pub use gaussian::{Covariance, GaussianEBM};
pub use mixture::{GaussianMixtureEBM, MixtureComponent};
pub use neural::{edm_scalings, EdmScalings, ForwardTrace, Mlp, NeuralEBM};

use crate::error::{Error, Result};
use crate::field::Field;

pub trait EnergyModel: Send + Sync {
    /// Shape of the fields the model acts on.
    fn shape(&self) -> &[usize];

    fn dim(&self) -> usize {
        self.shape().iter().product()
    }

    fn energy(&self, x: &Field, t: f64) -> Result<f64>;

    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field>;

    fn energy_and_grad(&self, x: &Field, t: f64) -> Result<(f64, Field)> {
        Ok((self.energy(x, t)?, self.grad_energy(x, t)?))
    }

    /// Tweedie denoiser `x − ∇E(x; t)`.
    fn denoise(&self, x: &Field, t: f64) -> Result<Field> {
        let g = self.grad_energy(x, t)?;
        x.sub(&g)
    }
}

impl<M: EnergyModel + ?Sized> EnergyModel for alloc::boxed::Box<M> {
    fn shape(&self) -> &[usize] {
        (**self).shape()
    }
    fn energy(&self, x: &Field, t: f64) -> Result<f64> {
        (**self).energy(x, t)
    }
    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field> {
        (**self).grad_energy(x, t)
    }
    fn energy_and_grad(&self, x: &Field, t: f64) -> Result<(f64, Field)> {
        (**self).energy_and_grad(x, t)
    }
}

impl<M: EnergyModel + ?Sized> EnergyModel for alloc::sync::Arc<M> {
    fn shape(&self) -> &[usize] {
        (**self).shape()
    }
    fn energy(&self, x: &Field, t: f64) -> Result<f64> {
        (**self).energy(x, t)
    }
    fn grad_energy(&self, x: &Field, t: f64) -> Result<Field> {
        (**self).grad_energy(x, t)
    }
    fn energy_and_grad(&self, x: &Field, t: f64) -> Result<(f64, Field)> {
        (**self).energy_and_grad(x, t)
    }
}

pub(crate) fn check_noise_level(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "t",
            "noise level must be positive and finite",
        ))
    }
}

pub(crate) fn check_input(model: &(impl EnergyModel + ?Sized), x: &Field, t: f64) -> Result<()> {
    check_noise_level(t)?;
    x.expect_shape(model.shape())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use alloc::vec::Vec;

    /// Central differences of the energy with step `h`.
    pub fn fd_gradient(model: &dyn EnergyModel, x: &Field, t: f64, h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.as_slice().to_vec();
                let mut m = p.clone();
                p[i] += h;
                m[i] -= h;
                let ep = model.energy(&Field::new(x.shape(), p).unwrap(), t).unwrap();
                let em = model.energy(&Field::new(x.shape(), m).unwrap(), t).unwrap();
                (ep - em) / (2.0 * h)
            })
            .collect()
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        libm::sqrt(num / den.max(1e-300))
    }
}
