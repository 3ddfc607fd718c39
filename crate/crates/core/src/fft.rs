//! Unitary discrete Fourier transforms for 1-D and 2-D power-of-two grids.
//!
//! Both directions carry a `1/sqrt(N)` factor, so the transform is an
//! isometry and a Fourier-diagonal operator's spectrum equals its
//! eigenvalues. Frequencies use the usual unshifted layout: index `k` holds
//! frequency `k` for `k < N/2` and `k - N` above.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;

/// Complex array with shape metadata, the output of [`fft_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub data: Vec<Complex64>,
    pub shape: Vec<usize>,
}

/// Precomputed radix-2 transform of one length.
#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if n == 1 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        Radix2 {
            n,
            twiddles,
            bitrev,
        }
    }

    /// Unnormalized in-place transform of a strided line.
    fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let u = buf[start + k];
                    let v = buf[start + k + half] * w;
                    buf[start + k] = u + v;
                    buf[start + k + half] = u - v;
                }
            }
            len <<= 1;
        }
    }
}

/// A reusable unitary transform for a fixed 1-D or 2-D shape.
#[derive(Debug, Clone)]
pub struct FftPlan {
    shape: Vec<usize>,
    rows: Radix2,
    cols: Option<Radix2>,
    scale: f64,
}

impl FftPlan {
    pub fn new(shape: &[usize]) -> Result<Self> {
        let ok = |n: usize| n >= 1 && n.is_power_of_two();
        match *shape {
            [n] if ok(n) => Ok(FftPlan {
                shape: shape.to_vec(),
                rows: Radix2::new(n),
                cols: None,
                scale: 1.0 / libm::sqrt(n as f64),
            }),
            [h, w] if ok(h) && ok(w) => Ok(FftPlan {
                shape: shape.to_vec(),
                rows: Radix2::new(w),
                cols: Some(Radix2::new(h)),
                scale: 1.0 / libm::sqrt((h * w) as f64),
            }),
            _ => Err(Error::UnsupportedShape {
                shape: shape.to_vec(),
                reason: "FFT needs a 1-D or 2-D shape with power-of-two extents",
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place unitary transform of a row-major buffer.
    pub fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.len());
        let w = self.rows.n;
        for row in buf.chunks_exact_mut(w) {
            self.rows.process(row, inverse);
        }
        if let Some(cols) = &self.cols {
            let h = cols.n;
            let mut line = alloc::vec![Complex64::new(0.0, 0.0); h];
            for c in 0..w {
                for r in 0..h {
                    line[r] = buf[r * w + c];
                }
                cols.process(&mut line, inverse);
                for r in 0..h {
                    buf[r * w + c] = line[r];
                }
            }
        }
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, true);
        spec.into_iter().map(|c| c.re).collect()
    }

    /// Signed integer frequency of flat index `idx` along each axis.
    pub fn frequency(&self, idx: usize) -> (i64, i64) {
        let signed = |k: usize, n: usize| {
            if k < n.div_ceil(2) {
                k as i64
            } else {
                k as i64 - n as i64
            }
        };
        match *self.shape {
            [n] => (signed(idx, n), 0),
            [h, w] => (signed(idx / w, h), signed(idx % w, w)),
            _ => unreachable!("plan shapes are validated at construction"),
        }
    }

    /// Flat index of the frequency `-k`.
    pub fn negated_index(&self, idx: usize) -> usize {
        match *self.shape {
            [n] => (n - idx) % n,
            [h, w] => {
                let (r, c) = (idx / w, idx % w);
                ((h - r) % h) * w + (w - c) % w
            }
            _ => unreachable!("plan shapes are validated at construction"),
        }
    }
}

/// Unitary forward transform of a real field.
pub fn fft_forward(x: &Field) -> Result<Spectrum> {
    let plan = FftPlan::new(x.shape())?;
    Ok(Spectrum {
        data: plan.forward_real(x.as_slice()),
        shape: x.shape().to_vec(),
    })
}

/// Unitary inverse transform; the imaginary part of the result is dropped.
pub fn fft_inverse(spec: &Spectrum) -> Result<Field> {
    let plan = FftPlan::new(&spec.shape)?;
    let re = plan.inverse_real(spec.data.clone());
    let f = Field::from_parts(&spec.shape, re);
    f.check_finite("fft_inverse")?;
    Ok(f)
}
