//! Flat real arrays with shape metadata.
//!
//! Every signal in the solver (images, measurements, noise draws, denoiser
//! outputs) is a [`Field`]. Arithmetic is elementwise; the shape is only
//! checked, never broadcast.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Field {
    /// Builds a field, rejecting length mismatches and non-finite entries.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.is_empty() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        check_finite(&data, "Field::new")?;
        Ok(Field {
            data,
            shape: shape.to_vec(),
        })
    }

    /// One-dimensional field.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Field::new(&[n], data)
    }

    pub fn from_slice(data: &[f64]) -> Result<Self> {
        Field::from_vec(data.to_vec())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Field {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Field {
            data: vec![value; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    /// Crate-internal constructor for data whose finiteness is checked by the caller.
    pub(crate) fn from_parts(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Field {
            data,
            shape: shape.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Same data, new shape with the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        check_finite(&self.data, context)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_parts(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.same_shape(other)?;
        Ok(Field::from_parts(
            &self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) -> Result<()> {
        self.same_shape(x)?;
        for (s, &v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_finite(data: &[f64], context: &'static str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { context, index }),
        None => Ok(()),
    }
}

/// Euclidean inner product of two equally shaped fields.
pub fn inner(u: &Field, v: &Field) -> Result<f64> {
    u.same_shape(v)?;
    Ok(dot(&u.data, &v.data))
}

/// Squared Euclidean norm.
pub fn norm2(u: &Field) -> f64 {
    dot(&u.data, &u.data)
}

/// Dot product with four interleaved partial sums (fixed order, so results
/// are reproducible).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
