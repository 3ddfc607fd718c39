//! Synthetic 2-D datasets.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::field::Field;
use crate::rng::standard_normal;

/// Two interleaved half circles: the outer arc `(cos θ, sin θ)` and the
/// inner arc `(1 − cos θ, ½ − sin θ)`, `θ ∈ [0, π]` evenly spaced, with
/// Gaussian coordinate noise of std `noise`.
pub fn moons<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Vec<Field> {
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let angle = |i: usize, m: usize| {
        if m > 1 {
            PI * i as f64 / (m - 1) as f64
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n_outer {
        let th = angle(i, n_outer);
        out.push([libm::cos(th), libm::sin(th)]);
    }
    for i in 0..n_inner {
        let th = angle(i, n_inner);
        out.push([1.0 - libm::cos(th), 0.5 - libm::sin(th)]);
    }
    out.into_iter()
        .map(|[a, b]| {
            let p = [
                a + noise * standard_normal(rng),
                b + noise * standard_normal(rng),
            ];
            Field::from_parts(&[2], p.to_vec())
        })
        .collect()
}

/// Euclidean distance from `p` to the noise-free moons curves.
pub fn moons_distance(p: [f64; 2]) -> f64 {
    fn arc(q: [f64; 2], upper: bool, ends: [[f64; 2]; 2]) -> f64 {
        let on_arc = if upper { q[1] >= 0.0 } else { q[1] <= 0.0 };
        if on_arc {
            (libm::hypot(q[0], q[1]) - 1.0).abs()
        } else {
            ends.iter()
                .map(|e| libm::hypot(q[0] - e[0], q[1] - e[1]))
                .fold(f64::INFINITY, f64::min)
        }
    }
    let outer = arc(p, true, [[1.0, 0.0], [-1.0, 0.0]]);
    let q = [p[0] - 1.0, p[1] - 0.5];
    let inner = arc(q, false, [[-1.0, 0.0], [1.0, 0.0]]);
    outer.min(inner)
}
