//! Deterministic seeding and Gaussian draws.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::field::Field;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` derived from `base`: `splitmix64(splitmix64(base) + index)`.
/// Mixing the base first keeps the streams of nearby base seeds disjoint.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(index))
}

/// Independent generator for chain `index`.
pub fn chain_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Field of i.i.d. standard normal entries.
pub fn normal_field<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Field {
    Field::from_parts(shape, normal_vec(rng, shape.iter().product()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = normal_vec(&mut chain_rng(3, 0), 4);
        let b: Vec<f64> = normal_vec(&mut chain_rng(3, 0), 4);
        let c: Vec<f64> = normal_vec(&mut chain_rng(3, 1), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for i in 0..100 {
            assert_ne!(derive_seed(1, i + 1), derive_seed(2, i));
        }
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let v = normal_vec(&mut chain_rng(11, 0), 200_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }
}
