//! Teachers for score distillation, including a deliberately
//! non-conservative one.

use std::f64::consts::PI;
use std::sync::Arc;

use alps_core::training::TeacherDenoiser;
use alps_core::{EnergyModel, Error, Field, Result};

/// Cell-centred points of an `n × n` grid on `[-half, half]²`; row index
/// follows the first coordinate.
pub fn grid_points(half: f64, n: usize) -> Vec<[f64; 2]> {
    let h = 2.0 * half / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push([-half + (r as f64 + 0.5) * h, -half + (c as f64 + 0.5) * h]);
        }
    }
    out
}

/// Score `−∇E(x; t)/t²` of a 2-D model on [`grid_points`], as two `[n, n]`
/// component fields.
pub fn model_score_field(
    model: &dyn EnergyModel,
    half: f64,
    n: usize,
    t: f64,
) -> Result<[Field; 2]> {
    let mut a = Vec::with_capacity(n * n);
    let mut b = Vec::with_capacity(n * n);
    for p in grid_points(half, n) {
        let g = model.grad_energy(&Field::from_slice(&p)?, t)?;
        a.push(-g.as_slice()[0] / (t * t));
        b.push(-g.as_slice()[1] / (t * t));
    }
    Ok([Field::new(&[n, n], a)?, Field::new(&[n, n], b)?])
}

/// Adds `λ·R∇ψ` to the score of a 2-D energy model, where `R` is the
/// quarter-turn rotation and `ψ = sin²(π(x₀+h)/2h)·sin²(π(x₁+h)/2h)` on
/// `[-h, h]²` (zero outside). The added field is divergence-free and has no
/// flux through the box edges, so it is orthogonal to every gradient field.
pub struct RotationalTeacher {
    base: Arc<dyn EnergyModel>,
    half: f64,
    strength: f64,
}

impl RotationalTeacher {
    pub fn with_strength(base: Arc<dyn EnergyModel>, half: f64, strength: f64) -> Result<Self> {
        if base.shape() != [2] {
            return Err(Error::UnsupportedShape {
                shape: base.shape().to_vec(),
                reason: "rotational teacher needs a 2-D model",
            });
        }
        if !(half > 0.0) || !strength.is_finite() {
            return Err(Error::invalid(
                "rotation",
                "need half > 0 and finite strength",
            ));
        }
        Ok(RotationalTeacher {
            base,
            half,
            strength,
        })
    }

    /// Chooses `λ` so that the added field's RMS over an `n × n` grid is
    /// `relative` times the RMS of the base score at noise level `t`.
    pub fn relative(
        base: Arc<dyn EnergyModel>,
        half: f64,
        relative: f64,
        t: f64,
        n: usize,
    ) -> Result<Self> {
        let unit = RotationalTeacher::with_strength(base.clone(), half, 1.0)?;
        let score = model_score_field(base.as_ref(), half, n, t)?;
        let rms = |f: &[Field; 2]| {
            let s: f64 = f.iter().flat_map(|c| c.as_slice()).map(|v| v * v).sum();
            (s / (n * n) as f64).sqrt()
        };
        let rot = unit.rotation_field(n)?;
        RotationalTeacher::with_strength(base, half, relative * rms(&score) / rms(&rot))
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// `λ·R∇ψ` at `x`.
    pub fn rotation(&self, x: [f64; 2]) -> [f64; 2] {
        let h = self.half;
        if x[0].abs() > h || x[1].abs() > h {
            return [0.0, 0.0];
        }
        let k = PI / (2.0 * h);
        let (a, b) = (k * (x[0] + h), k * (x[1] + h));
        let d0 = k * (2.0 * a).sin() * b.sin().powi(2);
        let d1 = k * a.sin().powi(2) * (2.0 * b).sin();
        [self.strength * d1, -self.strength * d0]
    }

    pub fn rotation_field(&self, n: usize) -> Result<[Field; 2]> {
        let pts = grid_points(self.half, n);
        let r: Vec<[f64; 2]> = pts.iter().map(|&p| self.rotation(p)).collect();
        Ok([
            Field::new(&[n, n], r.iter().map(|v| v[0]).collect())?,
            Field::new(&[n, n], r.iter().map(|v| v[1]).collect())?,
        ])
    }

    /// Teacher score on the grid at noise level `t`.
    pub fn score_field(&self, n: usize, t: f64) -> Result<[Field; 2]> {
        let [a, b] = model_score_field(self.base.as_ref(), self.half, n, t)?;
        let [ra, rb] = self.rotation_field(n)?;
        Ok([a.add(&ra)?, b.add(&rb)?])
    }
}

impl TeacherDenoiser for RotationalTeacher {
    fn denoise_teacher(&self, x: &Field, t: f64) -> Result<Field> {
        let d = self.base.denoise(x, t)?;
        let s = x.as_slice();
        let r = self.rotation([s[0], s[1]]);
        Field::new(
            &[2],
            vec![
                d.as_slice()[0] + t * t * r[0],
                d.as_slice()[1] + t * t * r[1],
            ],
        )
    }
}
