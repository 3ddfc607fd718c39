//! Annealing grids and the probability-flow prior sampler.

use alloc::vec::Vec;

use rand::Rng;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::rng::normal_field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub steps: usize,
}

impl NoiseSchedule {
    pub fn new(sigma_max: f64, sigma_min: f64, rho: f64, steps: usize) -> Result<Self> {
        let s = NoiseSchedule {
            sigma_max,
            sigma_min,
            rho,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite())
        {
            return Err(Error::invalid("schedule", "need sigma_max > sigma_min > 0"));
        }
        if !(self.rho >= 1.0) || !self.rho.is_finite() {
            return Err(Error::invalid("schedule.rho", "must be >= 1"));
        }
        if self.steps < 2 {
            return Err(Error::invalid("schedule.steps", "must be at least 2"));
        }
        Ok(())
    }

    /// `t_i = (σ_max^{1/ρ} + i/(N−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`, with the
    /// endpoints set exactly.
    pub fn levels(&self) -> Vec<f64> {
        let n = self.steps;
        let a = libm::pow(self.sigma_max, 1.0 / self.rho);
        let b = libm::pow(self.sigma_min, 1.0 / self.rho);
        (0..n)
            .map(|i| match i {
                0 => self.sigma_max,
                _ if i == n - 1 => self.sigma_min,
                _ => libm::pow(a + i as f64 / (n - 1) as f64 * (b - a), self.rho),
            })
            .collect()
    }
}

pub fn schedule_levels(s: &NoiseSchedule) -> Result<Vec<f64>> {
    s.validate()?;
    Ok(s.levels())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSample {
    pub x: Field,
    /// Gradient evaluations used.
    pub nfe: usize,
}

/// Integrates `dx/dt = ∇E(x; t)/t` from `x0` at `σ_max` down to `σ_min`
/// with Heun steps and a final Euler step.
pub fn heun_integrate(
    model: &(impl EnergyModel + ?Sized),
    s: &NoiseSchedule,
    x0: Field,
) -> Result<PriorSample> {
    let levels = schedule_levels(s)?;
    x0.expect_shape(model.shape())?;
    let mut x = x0;
    let mut nfe = 0;
    let last = levels.len() - 2;
    for i in 0..=last {
        let (t, t_next) = (levels[i], levels[i + 1]);
        let dt = t_next - t;
        let d = model.grad_energy(&x, t)?.scale(1.0 / t);
        nfe += 1;
        let mut euler = x.clone();
        euler.axpy(dt, &d)?;
        x = if i < last {
            let d2 = model.grad_energy(&euler, t_next)?.scale(1.0 / t_next);
            nfe += 1;
            let mut next = x.clone();
            next.axpy(0.5 * dt, &d)?;
            next.axpy(0.5 * dt, &d2)?;
            next
        } else {
            euler
        };
        if let Err(Error::NonFinite { .. }) = x.check_finite("") {
            return Err(Error::NonFinite {
                context: "prior sampler state (index is the step)",
                index: i,
            });
        }
    }
    Ok(PriorSample { x, nfe })
}

/// Draws `x ~ N(0, σ_max² I)` and runs [`heun_integrate`].
pub fn heun_prior_sample<R: Rng + ?Sized>(
    model: &(impl EnergyModel + ?Sized),
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<PriorSample> {
    s.validate()?;
    let x0 = normal_field(rng, model.shape()).scale(s.sigma_max);
    heun_integrate(model, s, x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{GaussianEBM, GaussianMixtureEBM};
    use crate::rng::chain_rng;
    use alloc::vec;

    #[test]
    fn endpoints_and_spacing() {
        for (smax, smin, rho) in [(10.0, 0.01, 5.0), (5.0, 0.002, 7.0)] {
            let s = NoiseSchedule::new(smax, smin, rho, 50).unwrap();
            let t = s.levels();
            assert_eq!(t[0], smax);
            assert_eq!(t[49], smin);
            for w in t.windows(3) {
                assert!(w[0] > w[1]);
                assert!(w[0] - w[1] > w[1] - w[2]);
            }
        }
        assert!(NoiseSchedule::new(1.0, 2.0, 5.0, 10).is_err());
        assert!(NoiseSchedule::new(10.0, 0.1, 0.5, 10).is_err());
        assert!(NoiseSchedule::new(10.0, 0.1, 5.0, 1).is_err());
    }

    #[test]
    fn interior_levels_follow_the_formula() {
        let s = NoiseSchedule::new(10.0, 0.01, 5.0, 50).unwrap();
        let t = s.levels();
        let a = 10f64.powf(0.2);
        let b = 0.01f64.powf(0.2);
        for (i, ti) in t.iter().enumerate() {
            let expect = (a + i as f64 / 49.0 * (b - a)).powf(5.0);
            assert!((ti - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn nfe_accounting() {
        let m = GaussianEBM::isotropic(&[1], 1.0).unwrap();
        let s = NoiseSchedule::new(80.0, 0.002, 7.0, 18).unwrap();
        let out = heun_prior_sample(&m, &s, &mut chain_rng(0, 0)).unwrap();
        assert_eq!(out.nfe, 33);
    }

    #[test]
    fn two_level_schedule_is_one_euler_step() {
        let m = GaussianEBM::isotropic(&[1], 2.0).unwrap();
        let s = NoiseSchedule::new(3.0, 0.5, 7.0, 2).unwrap();
        let x0 = 1.7;
        let out = heun_integrate(&m, &s, Field::from_vec(vec![x0]).unwrap()).unwrap();
        // ∇E(x; t) = t²x/(s² + t²)
        let grad = 9.0 * x0 / (2.0 + 9.0);
        let expect = x0 + (0.5 - 3.0) * grad / 3.0;
        assert!((out.x.as_slice()[0] - expect).abs() < 1e-14);
        assert_eq!(out.nfe, 1);
    }

    #[test]
    fn three_level_schedule_by_hand() {
        let m = GaussianEBM::isotropic(&[1], 1.0).unwrap();
        let s = NoiseSchedule::new(4.0, 0.1, 1.0, 3).unwrap();
        let t = s.levels();
        let g = |x: f64, t: f64| t * t * x / (1.0 + t * t) / t;
        let x0 = -0.8;
        let (t0, t1, t2) = (t[0], t[1], t[2]);
        let d = g(x0, t0);
        let xe = x0 + (t1 - t0) * d;
        let x1 = x0 + 0.5 * (t1 - t0) * (d + g(xe, t1));
        let x2 = x1 + (t2 - t1) * g(x1, t1);
        let out = heun_integrate(&m, &s, Field::from_vec(vec![x0]).unwrap()).unwrap();
        assert!((out.x.as_slice()[0] - x2).abs() < 1e-14);
        assert_eq!(out.nfe, 3);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = GaussianEBM::isotropic(&[3], 1.0).unwrap();
        let s = NoiseSchedule::new(10.0, 0.01, 5.0, 20).unwrap();
        let a = heun_prior_sample(&m, &s, &mut chain_rng(4, 2)).unwrap();
        let b = heun_prior_sample(&m, &s, &mut chain_rng(4, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_mode_fractions() {
        let m = GaussianMixtureEBM::isotropic(&[0.3, 0.7], &[vec![-3.0, 0.0], vec![3.0, 0.0]], 0.1)
            .unwrap();
        // σ_max must dwarf the mixture's mean offset for N(0, σ_max²) to match p_{σ_max}
        let s = NoiseSchedule::new(80.0, 0.01, 7.0, 30).unwrap();
        let left = (0..2000)
            .filter(|&i| {
                heun_prior_sample(&m, &s, &mut chain_rng(9, i))
                    .unwrap()
                    .x
                    .as_slice()[0]
                    < 0.0
            })
            .count();
        assert!(
            (left as f64 / 2000.0 - 0.3).abs() < 0.04,
            "{}",
            left as f64 / 2000.0
        );
    }
}
