//! Spectral Helmholtz–Hodge split of a 2-D vector field.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftPlan;
use crate::field::{inner, norm2, Field};

/// How the field is continued beyond the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// The grid is one period of a periodic field.
    Periodic,
    /// Mirror the grid across each edge (cell-centred) so that the normal
    /// component is odd and the tangential component even. Flux-free
    /// rotational fields stay rotational under this extension.
    Reflect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzParts {
    pub conservative: [Field; 2],
    pub solenoidal: [Field; 2],
}

impl HelmholtzParts {
    /// `‖solenoidal‖ / ‖field‖` in the summed L2 norm over both components.
    pub fn solenoidal_fraction(&self) -> f64 {
        let s = norm2(&self.solenoidal[0]) + norm2(&self.solenoidal[1]);
        let c = norm2(&self.conservative[0]) + norm2(&self.conservative[1]);
        let t = s + c;
        if t == 0.0 {
            0.0
        } else {
            libm::sqrt(s / t)
        }
    }

    /// Inner product of the two parts, summed over components.
    pub fn cross_inner(&self) -> f64 {
        let a = inner(&self.conservative[0], &self.solenoidal[0]).unwrap_or(f64::NAN);
        let b = inner(&self.conservative[1], &self.solenoidal[1]).unwrap_or(f64::NAN);
        a + b
    }
}

/// Splits `(vy, vx)` on an `[H, W]` grid with spacings `(dy, dx)` into a
/// gradient part and a divergence-free part. The mean of the field goes to
/// the conservative part.
pub fn helmholtz_decompose_2d(
    vy: &Field,
    vx: &Field,
    spacing: (f64, f64),
    boundary: Boundary,
) -> Result<HelmholtzParts> {
    vy.same_shape(vx)?;
    let (h, w) = match *vy.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(Error::UnsupportedShape {
                shape: vy.shape().to_vec(),
                reason: "Helmholtz split needs an [H, W] grid",
            })
        }
    };
    if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
        return Err(Error::invalid("spacing", "must be positive"));
    }
    vy.check_finite("vy")?;
    vx.check_finite("vx")?;
    match boundary {
        Boundary::Periodic => {
            let (cy, cx, sy, sx) = project(vy.as_slice(), vx.as_slice(), h, w, spacing)?;
            let f = |d| Field::from_parts(&[h, w], d);
            Ok(HelmholtzParts {
                conservative: [f(cy), f(cx)],
                solenoidal: [f(sy), f(sx)],
            })
        }
        Boundary::Reflect => {
            let ey = reflect(vy.as_slice(), h, w, -1.0, 1.0);
            let ex = reflect(vx.as_slice(), h, w, 1.0, -1.0);
            let (cy, cx, sy, sx) = project(&ey, &ex, 2 * h, 2 * w, spacing)?;
            let crop = |d: Vec<f64>| {
                let mut out = Vec::with_capacity(h * w);
                for r in 0..h {
                    out.extend_from_slice(&d[r * 2 * w..r * 2 * w + w]);
                }
                Field::from_parts(&[h, w], out)
            };
            Ok(HelmholtzParts {
                conservative: [crop(cy), crop(cx)],
                solenoidal: [crop(sy), crop(sx)],
            })
        }
    }
}

/// Mirror extension to `[2H, 2W]` with sign `sy` across horizontal edges and
/// `sx` across vertical edges.
fn reflect(v: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> Vec<f64> {
    let (hh, ww) = (2 * h, 2 * w);
    let mut out = alloc::vec![0.0; hh * ww];
    for r in 0..hh {
        let (rr, fy) = if r < h { (r, 1.0) } else { (hh - 1 - r, sy) };
        for c in 0..ww {
            let (cc, fx) = if c < w { (c, 1.0) } else { (ww - 1 - c, sx) };
            out[r * ww + c] = fy * fx * v[rr * w + cc];
        }
    }
    out
}

type Parts = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn project(vy: &[f64], vx: &[f64], h: usize, w: usize, spacing: (f64, f64)) -> Result<Parts> {
    let plan = FftPlan::new(&[h, w])?;
    let fy = plan.forward_real(vy);
    let fx = plan.forward_real(vx);
    let mut cy = alloc::vec![Complex64::new(0.0, 0.0); h * w];
    let mut cx = cy.clone();
    for i in 0..h * w {
        let (ky, kx) = plan.frequency(i);
        // The Nyquist derivative is taken as zero so the spectrum stays Hermitian.
        let wavenumber = |k: i64, n: usize, d: f64| {
            if 2 * k.unsigned_abs() as usize == n {
                0.0
            } else {
                k as f64 / (n as f64 * d)
            }
        };
        let ky = wavenumber(ky, h, spacing.0);
        let kx = wavenumber(kx, w, spacing.1);
        let k2 = ky * ky + kx * kx;
        if k2 == 0.0 {
            cy[i] = fy[i];
            cx[i] = fx[i];
        } else {
            let proj = (fy[i] * ky + fx[i] * kx) / k2;
            cy[i] = proj * ky;
            cx[i] = proj * kx;
        }
    }
    let cy = plan.inverse_real(cy);
    let cx = plan.inverse_real(cx);
    let sy = vy.iter().zip(&cy).map(|(a, b)| a - b).collect();
    let sx = vx.iter().zip(&cx).map(|(a, b)| a - b).collect();
    Ok((cy, cx, sy, sx))
}
