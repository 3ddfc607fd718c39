//! Brute-force posterior on a grid for one- and two-dimensional problems.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::solver::{posterior_energy, PosteriorProblem};

/// Largest fraction of the mass allowed on the outermost ring of grid nodes.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;
/// Mode regions are connected sets above this fraction of the peak density.
pub const REGION_THRESHOLD: f64 = 0.01;

/// An axis-aligned box sampled at `resolution[d]` equally spaced nodes per
/// axis, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || d > 2 || upper.len() != d || resolution.len() != d {
            return Err(Error::invalid(
                "box",
                "need matching bounds and resolution in 1 or 2 dimensions",
            ));
        }
        for i in 0..d {
            if !(lower[i].is_finite() && upper[i].is_finite() && upper[i] > lower[i]) {
                return Err(Error::invalid(
                    "box",
                    "each upper bound must exceed its lower bound",
                ));
            }
            if resolution[i] < 3 {
                return Err(Error::invalid(
                    "resolution",
                    "need at least 3 nodes per axis",
                ));
            }
        }
        Ok(GridBox {
            lower,
            upper,
            resolution,
        })
    }

    /// Square box `[-half, half]^dim`.
    pub fn centered(dim: usize, half: f64, n: usize) -> Result<Self> {
        GridBox::new(vec![-half; dim], vec![half; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.resolution[axis] - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.step(a)).product()
    }

    /// Per-axis node indices of flat index `i` (axis 0 slowest).
    pub fn unravel(&self, i: usize) -> Vec<usize> {
        match self.dim() {
            1 => vec![i],
            _ => vec![i / self.resolution[1], i % self.resolution[1]],
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.resolution[1] + idx[1],
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.unravel(i)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.lower[a] + k as f64 * self.step(a))
            .collect()
    }

    /// Nearest node to `x`, or `None` outside the box.
    pub fn node_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(x.len());
        for (a, &v) in x.iter().enumerate() {
            let k = libm::round((v - self.lower[a]) / self.step(a));
            if !(k >= 0.0 && k < self.resolution[a] as f64) {
                return None;
            }
            idx.push(k as usize);
        }
        Some(self.ravel(&idx))
    }

    fn on_boundary(&self, i: usize) -> bool {
        self.unravel(i)
            .iter()
            .zip(&self.resolution)
            .any(|(&k, &n)| k == 0 || k == n - 1)
    }

    fn neighbours(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let idx = self.unravel(i);
        for a in 0..self.dim() {
            if idx[a] > 0 {
                let mut j = idx.clone();
                j[a] -= 1;
                out.push(self.ravel(&j));
            }
            if idx[a] + 1 < self.resolution[a] {
                let mut j = idx.clone();
                j[a] += 1;
                out.push(self.ravel(&j));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRegion {
    /// Probability mass of the region.
    pub mass: f64,
    pub peak: Vec<f64>,
    pub centroid: Vec<f64>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: GridBox,
    /// Normalized density at every node.
    pub density: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub covariance: Vec<f64>,
    pub mode: Vec<f64>,
    /// Sorted by decreasing mass.
    pub regions: Vec<ModeRegion>,
    /// Region index of each node, if it is above the threshold.
    pub labels: Vec<Option<usize>>,
    pub boundary_mass: f64,
}

impl GridPosterior {
    /// Region containing `x`, or the one with the closest labelled node.
    pub fn assign(&self, x: &[f64]) -> usize {
        if let Some(r) = self.grid.node_of(x).and_then(|i| self.labels[i]) {
            return r;
        }
        let mut best = (f64::INFINITY, 0);
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(r) = *l {
                let d: f64 = self
                    .grid
                    .point(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, r);
                }
            }
        }
        best.1
    }

    /// Region masses rescaled to sum to one.
    pub fn region_weights(&self) -> Vec<f64> {
        let total: f64 = self.regions.iter().map(|r| r.mass).sum();
        self.regions.iter().map(|r| r.mass / total).collect()
    }

    /// Fraction of `samples` assigned to each region.
    pub fn visit_fractions(&self, samples: &[Field]) -> Vec<f64> {
        let mut counts = vec![0usize; self.regions.len()];
        for s in samples {
            counts[self.assign(s.as_slice())] += 1;
        }
        counts
            .iter()
            .map(|&c| c as f64 / samples.len().max(1) as f64)
            .collect()
    }
}

/// Evaluates `exp(−C_t)` on the grid and returns its normalized moments,
/// mode and connected high-density regions. Fails with `BoxTooSmall` when
/// more than [`BOUNDARY_MASS_LIMIT`] of the mass sits on the box edge.
pub fn grid_posterior_oracle(
    p: &PosteriorProblem<'_>,
    grid: &GridBox,
    t: f64,
) -> Result<GridPosterior> {
    let shape = p.model.shape().to_vec();
    if p.model.dim() != grid.dim() {
        return Err(Error::UnsupportedShape {
            shape,
            reason: "grid oracle dimension must match the model",
        });
    }
    let n = grid.len();
    let mut c = Vec::with_capacity(n);
    for i in 0..n {
        let x = Field::from_parts(&shape, grid.point(i));
        c.push(posterior_energy(p, &x, t)?);
    }
    let c_min = c.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = c.iter().map(|&v| libm::exp(c_min - v)).collect();
    let total: f64 = raw.iter().sum();
    let vol = grid.cell_volume();
    let density: Vec<f64> = raw.iter().map(|&v| v / (total * vol)).collect();
    let weight: Vec<f64> = raw.iter().map(|&v| v / total).collect();

    let boundary_mass: f64 = (0..n)
        .filter(|&i| grid.on_boundary(i))
        .map(|i| weight[i])
        .sum();
    if boundary_mass > BOUNDARY_MASS_LIMIT {
        return Err(Error::BoxTooSmall { boundary_mass });
    }

    let d = grid.dim();
    let mut mean = vec![0.0; d];
    for (i, w) in weight.iter().enumerate() {
        for (m, v) in mean.iter_mut().zip(grid.point(i)) {
            *m += w * v;
        }
    }
    let mut covariance = vec![0.0; d * d];
    for (i, w) in weight.iter().enumerate() {
        let x = grid.point(i);
        for a in 0..d {
            for b in 0..d {
                covariance[a * d + b] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    let arg_max = (0..n)
        .max_by(|&a, &b| raw[a].total_cmp(&raw[b]))
        .unwrap_or(0);
    let mode = grid.point(arg_max);

    let (labels, regions) = label_regions(grid, &raw, &weight);
    Ok(GridPosterior {
        grid: grid.clone(),
        density,
        mean,
        covariance,
        mode,
        regions,
        labels,
        boundary_mass,
    })
}

fn label_regions(
    grid: &GridBox,
    raw: &[f64],
    weight: &[f64],
) -> (Vec<Option<usize>>, Vec<ModeRegion>) {
    let n = raw.len();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let cut = REGION_THRESHOLD * peak;
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut found = Vec::new();
    let mut stack = Vec::new();
    let mut nb = Vec::new();
    for start in 0..n {
        if raw[start] < cut || labels[start].is_some() {
            continue;
        }
        let id = found.len();
        labels[start] = Some(id);
        stack.push(start);
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            grid.neighbours(i, &mut nb);
            for &j in &nb {
                if raw[j] >= cut && labels[j].is_none() {
                    labels[j] = Some(id);
                    stack.push(j);
                }
            }
        }
        let mass: f64 = members.iter().map(|&i| weight[i]).sum();
        let top = *members
            .iter()
            .max_by(|&&a, &&b| raw[a].total_cmp(&raw[b]))
            .unwrap_or(&start);
        let mut centroid = vec![0.0; grid.dim()];
        for &i in &members {
            for (c, v) in centroid.iter_mut().zip(grid.point(i)) {
                *c += weight[i] * v / mass;
            }
        }
        found.push(ModeRegion {
            mass,
            peak: grid.point(top),
            centroid,
            nodes: members.len(),
        });
    }
    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| found[b].mass.total_cmp(&found[a].mass));
    let mut remap = vec![0; found.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let regions = order.iter().map(|&o| found[o].clone()).collect();
    let labels = labels.into_iter().map(|l| l.map(|r| remap[r])).collect();
    (labels, regions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{GaussianEBM, GaussianMixtureEBM};
    use crate::forward::LinearForwardModel;
    use crate::linalg::Matrix;

    #[test]
    fn linear_gaussian_moments_match_closed_form() {
        // prior N(0, I), y = x + noise, η = 1, at t → 0 the posterior is
        // N(y/2, I/2).
        let g = GaussianEBM::isotropic(&[2], 1.0).unwrap();
        let a = LinearForwardModel::identity(&[2]);
        let y = Field::from_vec(vec![1.0, -0.6]).unwrap();
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let t = 1e-3;
        let grid = GridBox::centered(2, 6.0, 241).unwrap();
        let post = grid_posterior_oracle(&p, &grid, t).unwrap();
        // C_t includes a prior widened by t²: variance 1 + t².
        let s = 1.0 + t * t;
        let var = s / (1.0 + s);
        let mean = [
            y.as_slice()[0] * s / (1.0 + s),
            y.as_slice()[1] * s / (1.0 + s),
        ];
        for i in 0..2 {
            assert!((post.mean[i] - mean[i]).abs() < 1e-6, "{:?}", post.mean);
            assert!((post.covariance[i * 2 + i] - var).abs() < 1e-6);
        }
        assert!(post.covariance[1].abs() < 1e-9);
        assert_eq!(post.regions.len(), 1);
        assert!((post.mode[0] - 0.5).abs() <= grid.step(0) / 2.0 + 1e-12);
    }

    #[test]
    fn small_box_is_rejected() {
        let g = GaussianEBM::isotropic(&[2], 1.0).unwrap();
        let a = LinearForwardModel::zero(&[2]);
        let y = Field::zeros(&[2]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let grid = GridBox::centered(2, 2.0, 41).unwrap();
        match grid_posterior_oracle(&p, &grid, 0.01) {
            Err(Error::BoxTooSmall { boundary_mass }) => {
                assert!(boundary_mass > BOUNDARY_MASS_LIMIT)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mixture_regions_follow_component_weights() {
        let g = GaussianMixtureEBM::isotropic(&[0.7, 0.3], &[vec![-2.0], vec![2.0]], 0.1).unwrap();
        let a = LinearForwardModel::zero(&[1]);
        let y = Field::zeros(&[1]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let grid = GridBox::centered(1, 5.0, 8001).unwrap();
        let t = 1e-3;
        let post = grid_posterior_oracle(&p, &grid, t).unwrap();
        assert_eq!(post.regions.len(), 2);
        // Each region is the interval where π_k φ_k exceeds 1% of the top
        // peak, so its mass is a truncated Gaussian integral.
        let s = 0.1 + t * t;
        let expected: Vec<f64> = [0.7f64, 0.3]
            .iter()
            .map(|&pi| {
                let r = libm::sqrt(2.0 * s * libm::log(pi / (REGION_THRESHOLD * 0.7)));
                pi * libm::erf(r / libm::sqrt(2.0 * s))
            })
            .collect();
        for k in 0..2 {
            assert!(
                (post.regions[k].mass - expected[k]).abs() < 1e-4,
                "{:?} {expected:?}",
                post.regions
            );
        }
        let w = post.region_weights();
        assert!(w[0] > 0.7 && w[1] < 0.3);
        assert!(post.regions[0].peak[0] < 0.0);
        assert_eq!(post.assign(&[-1.0]), 0);
        assert_eq!(post.assign(&[0.9]), 1);
        assert_eq!(post.assign(&[40.0]), 1);
        let xs = [
            Field::from_vec(vec![-2.0]).unwrap(),
            Field::from_vec(vec![2.1]).unwrap(),
            Field::from_vec(vec![-1.9]).unwrap(),
        ];
        let f = post.visit_fractions(&xs);
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dense_operator_posterior_matches_gaussian_conditioning() {
        let g = GaussianEBM::isotropic(&[2], 0.5).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        let a = LinearForwardModel::dense(m).unwrap();
        let y = Field::from_vec(vec![0.8]).unwrap();
        let eta = 0.3;
        let p = PosteriorProblem::new(&g, &a, &y, eta).unwrap();
        let t = 1e-3;
        let post = grid_posterior_oracle(&p, &GridBox::centered(2, 4.0, 301).unwrap(), t).unwrap();
        // precision Λ = I/s + aaᵀ/η², mean Λ⁻¹ a y/η²
        let s = 0.5 + t * t;
        let (a0, a1) = (1.0, 0.5);
        let l = [
            1.0 / s + a0 * a0 / (eta * eta),
            a0 * a1 / (eta * eta),
            1.0 / s + a1 * a1 / (eta * eta),
        ];
        let det = l[0] * l[2] - l[1] * l[1];
        let cov = [l[2] / det, -l[1] / det, l[0] / det];
        let b = [a0 * 0.8 / (eta * eta), a1 * 0.8 / (eta * eta)];
        let mean = [cov[0] * b[0] + cov[1] * b[1], cov[1] * b[0] + cov[2] * b[1]];
        assert!((post.mean[0] - mean[0]).abs() < 1e-6 && (post.mean[1] - mean[1]).abs() < 1e-6);
        assert!((post.covariance[0] - cov[0]).abs() < 1e-6);
        assert!((post.covariance[1] - cov[1]).abs() < 1e-6);
        assert!((post.covariance[3] - cov[2]).abs() < 1e-6);
    }

    #[test]
    fn box_validation() {
        assert!(GridBox::new(vec![0.0], vec![0.0], vec![10]).is_err());
        assert!(GridBox::new(vec![0.0; 3], vec![1.0; 3], vec![10; 3]).is_err());
        assert!(GridBox::new(vec![0.0], vec![1.0], vec![2]).is_err());
        let g = GridBox::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![11, 21]).unwrap();
        assert_eq!(g.node_of(&[0.5, 0.0]), Some(g.ravel(&[5, 10])));
        assert_eq!(g.node_of(&[1.2, 0.0]), None);
        assert_eq!(g.point(g.ravel(&[10, 20])), vec![1.0, 1.0]);
    }
}
