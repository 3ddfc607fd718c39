//! Posterior summaries, energy-based quality scores and reference oracles.

mod grid;
mod helmholtz;

pub use grid::{grid_posterior_oracle, GridBox, GridPosterior, ModeRegion};
pub use helmholtz::{helmholtz_decompose_2d, Boundary, HelmholtzParts};

use alloc::vec;
use alloc::vec::Vec;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::{norm2, Field};
use crate::forward::LinearForwardModel;
use crate::solver::{alps_solve_chain, posterior_energy, ALPSConfig, PosteriorProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mmse: Field,
    pub pixel_std: Field,
    pub map: Field,
    pub count: usize,
}

/// Elementwise sample mean and unbiased standard deviation.
pub fn summarize(samples: &[Field], map: &Field) -> Result<PosteriorSummary> {
    if samples.len() < 2 {
        return Err(Error::invalid(
            "samples",
            "need at least two samples for a std",
        ));
    }
    let shape = samples[0].shape();
    for s in samples {
        s.expect_shape(shape)?;
    }
    map.expect_shape(shape)?;
    let m = samples.len() as f64;
    let n = samples[0].len();
    let mut mean = vec![0.0; n];
    for s in samples {
        for (a, v) in mean.iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; n];
    for s in samples {
        for ((a, v), mu) in var.iter_mut().zip(s.as_slice()).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let std = var.into_iter().map(|v| libm::sqrt(v / (m - 1.0))).collect();
    Ok(PosteriorSummary {
        mmse: Field::from_parts(shape, mean),
        pixel_std: Field::from_parts(shape, std),
        map: map.clone(),
        count: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScore {
    /// `E(x; t_eval) / t_eval²`
    pub nlpr: f64,
    /// `C_{t_eval}(x)`
    pub nlpo: f64,
    pub z_nlpr: f64,
    pub z_nlpo: f64,
    /// The cohort was too small or constant for z-scores; they are set to 0.
    pub degenerate_cohort: bool,
}

/// `(value − mean)/std` over the cohort, or zeros when undefined.
pub fn z_scores(values: &[f64]) -> (Vec<f64>, bool) {
    let m = values.len();
    if m < 2 {
        return (vec![0.0; m], true);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let sd =
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64);
    if !(sd > 0.0) {
        return (vec![0.0; m], true);
    }
    (values.iter().map(|v| (v - mean) / sd).collect(), false)
}

pub fn nlpr(model: &(impl EnergyModel + ?Sized), x: &Field, t_eval: f64) -> Result<f64> {
    Ok(model.energy(x, t_eval)? / (t_eval * t_eval))
}

pub fn quality_scores(
    p: &PosteriorProblem<'_>,
    xs: &[Field],
    t_eval: f64,
) -> Result<Vec<QualityScore>> {
    if !(t_eval > 0.0) {
        return Err(Error::invalid("t_eval", "must be positive"));
    }
    let mut pr = Vec::with_capacity(xs.len());
    let mut po = Vec::with_capacity(xs.len());
    for x in xs {
        pr.push(nlpr(p.model, x, t_eval)?);
        po.push(posterior_energy(p, x, t_eval)?);
    }
    let (zr, dr) = z_scores(&pr);
    let (zo, d_o) = z_scores(&po);
    Ok((0..xs.len())
        .map(|i| QualityScore {
            nlpr: pr[i],
            nlpo: po[i],
            z_nlpr: zr[i],
            z_nlpo: zo[i],
            degenerate_cohort: dr || d_o,
        })
        .collect())
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Area under the ROC curve for scores where `positives` should be larger,
/// via the Mann–Whitney rank statistic.
pub fn auc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::invalid("cohorts", "both must be nonempty"));
    }
    let mut all = negatives.to_vec();
    all.extend_from_slice(positives);
    let r = ranks(&all);
    let (n0, n1) = (negatives.len() as f64, positives.len() as f64);
    let rank_sum: f64 = r[negatives.len()..].iter().sum();
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n0 * n1))
}

/// Two-sided Mann–Whitney p-value (normal approximation with tie correction).
pub fn mann_whitney_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let u_auc = auc(a, b)?;
    let (n0, n1) = (a.len() as f64, b.len() as f64);
    let mut all = a.to_vec();
    all.extend_from_slice(b);
    let n = n0 + n1;
    let r = ranks(&all);
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let c = (j - i + 1) as f64;
        tie += c * c * c - c;
        i = j + 1;
    }
    let var = n0 * n1 / 12.0 * ((n + 1.0) - tie / (n * (n - 1.0)));
    if !(var > 0.0) {
        return Ok(1.0);
    }
    let z = (u_auc * n0 * n1 - n0 * n1 / 2.0) / libm::sqrt(var);
    Ok(libm::erfc(z.abs() / core::f64::consts::SQRT_2))
}

/// ROC AUC of NLPr as an out-of-distribution score.
pub fn ood_auc(
    model: &(impl EnergyModel + ?Sized),
    in_dist: &[Field],
    out_dist: &[Field],
    t_eval: f64,
) -> Result<f64> {
    let score = |xs: &[Field]| {
        xs.iter()
            .map(|x| nlpr(model, x, t_eval))
            .collect::<Result<Vec<_>>>()
    };
    auc(&score(in_dist)?, &score(out_dist)?)
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(
            "spearman",
            "need two equal-length series of length >= 2",
        ));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / libm::sqrt(saa * sbb))
}

/// `10·log10(peak² / MSE)`; `+∞` for an exact match.
pub fn psnr(x: &Field, reference: &Field, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak", "must be positive"));
    }
    let mse = norm2(&x.sub(reference)?) / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(peak * peak / mse))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortStats {
    pub nlpr: Vec<f64>,
    pub nlpo: Vec<f64>,
    pub median_nlpr: f64,
    pub median_nlpo: f64,
}

impl CohortStats {
    pub fn new(nlpr: Vec<f64>, nlpo: Vec<f64>) -> Self {
        CohortStats {
            median_nlpr: median(&nlpr),
            median_nlpo: median(&nlpo),
            nlpr,
            nlpo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    pub correct: CohortStats,
    pub wrong: CohortStats,
    /// Mann–Whitney p-value comparing the two NLPo cohorts.
    pub nlpo_p_value: f64,
    pub t_eval: f64,
}

impl MismatchReport {
    /// Both medians are strictly larger under the wrong operator.
    pub fn detects_mismatch(&self) -> bool {
        self.wrong.median_nlpr > self.correct.median_nlpr
            && self.wrong.median_nlpo > self.correct.median_nlpo
    }
}

/// Scores of chain outputs under the problem they were solved with.
pub fn cohort_scores(p: &PosteriorProblem<'_>, xs: &[Field], t_eval: f64) -> Result<CohortStats> {
    let scores = quality_scores(p, xs, t_eval)?;
    Ok(CohortStats::new(
        scores.iter().map(|s| s.nlpr).collect(),
        scores.iter().map(|s| s.nlpo).collect(),
    ))
}

/// Reconstructs `y` with `chains` ALPS chains under each operator and
/// compares NLPr/NLPo of the outputs at `σ_min`. Each reconstruction is
/// scored by the posterior it was produced under.
pub fn mismatch_report(
    model: &dyn EnergyModel,
    correct: &LinearForwardModel,
    wrong: &LinearForwardModel,
    y: &Field,
    eta: f64,
    cfg: &ALPSConfig,
    chains: usize,
) -> Result<MismatchReport> {
    if correct.input_shape() != wrong.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: correct.input_shape().to_vec(),
            found: wrong.input_shape().to_vec(),
        });
    }
    let t_eval = cfg.schedule.sigma_min;
    let run = |a: &LinearForwardModel| -> Result<CohortStats> {
        let p = PosteriorProblem::new(model, a, y, eta)?;
        let xs = (0..chains as u64)
            .map(|c| Ok(alps_solve_chain(&p, cfg, c)?.final_x))
            .collect::<Result<Vec<_>>>()?;
        cohort_scores(&p, &xs, t_eval)
    };
    let c = run(correct)?;
    let w = run(wrong)?;
    let nlpo_p_value = mann_whitney_p(&c.nlpo, &w.nlpo)?;
    Ok(MismatchReport {
        correct: c,
        wrong: w,
        nlpo_p_value,
        t_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{GaussianEBM, GaussianMixtureEBM};
    use crate::rng::{chain_rng, normal_field, standard_normal};

    #[test]
    fn summary_basics() {
        let v = Field::from_vec(vec![1.0, -2.0]).unwrap();
        let s = summarize(&[v.clone(), v.scale(-1.0)], &v).unwrap();
        assert_eq!(s.mmse.as_slice(), &[0.0, 0.0]);
        assert!((s.pixel_std.as_slice()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.pixel_std.as_slice()[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let same = summarize(&[v.clone(), v.clone(), v.clone()], &v).unwrap();
        assert!(same.pixel_std.as_slice().iter().all(|&x| x == 0.0));
        assert!(summarize(&[v.clone()], &v).is_err());
    }

    #[test]
    fn summary_mean_obeys_the_clt_bound() {
        let mut rng = chain_rng(1, 0);
        let (mu, sigma, m) = (0.7, 2.0, 10_000);
        let xs: Vec<Field> = (0..m)
            .map(|_| normal_field(&mut rng, &[3]).map(|z| mu + sigma * z))
            .collect();
        let s = summarize(&xs, &xs[0]).unwrap();
        for &v in s.mmse.as_slice() {
            assert!((v - mu).abs() < 3.0 * sigma / (m as f64).sqrt());
        }
    }

    #[test]
    fn nlpr_orders_like_mahalanobis_distance() {
        let g = GaussianEBM::isotropic(&[2], 1.0).unwrap();
        let a = LinearForwardModel::identity(&[2]);
        let y = Field::zeros(&[2]);
        let p = PosteriorProblem::new(&g, &a, &y, 1.0).unwrap();
        let mut rng = chain_rng(2, 0);
        let xs: Vec<Field> = (0..50).map(|_| normal_field(&mut rng, &[2])).collect();
        let scores = quality_scores(&p, &xs, 0.1).unwrap();
        let dist: Vec<f64> = xs.iter().map(norm2).collect();
        assert_eq!(
            ranks(&dist),
            ranks(&scores.iter().map(|s| s.nlpr).collect::<Vec<_>>())
        );
        let one = quality_scores(&p, &xs[..1], 0.1).unwrap();
        assert!(one[0].degenerate_cohort && one[0].z_nlpr == 0.0);
        let (z, flag) = z_scores(&[1.0, 2.0, 3.0, 6.0]);
        assert!(!flag);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(auc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        let mut rng = chain_rng(3, 0);
        let a: Vec<f64> = (0..2000).map(|_| standard_normal(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| standard_normal(&mut rng)).collect();
        assert!((auc(&a, &b).unwrap() - 0.5).abs() < 0.03);
        assert!(mann_whitney_p(&a, &b).unwrap() > 0.01);
        assert!(auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn gmm_separates_manifold_from_displaced_points() {
        let var: f64 = 0.05;
        let sd = var.sqrt();
        let shift = |g: &GaussianMixtureEBM, rng: &mut _, by: &[f64]| {
            let s = g.sample(rng);
            s.zip_map(&Field::from_slice(by).unwrap(), |a, b| a + b)
                .unwrap()
        };
        let g1 = GaussianMixtureEBM::isotropic(&[0.5, 0.5], &[vec![-1.0], vec![1.0]], var).unwrap();
        let mut rng = chain_rng(4, 0);
        let inside: Vec<Field> = (0..500).map(|_| g1.sample(&mut rng)).collect();
        let displaced: Vec<Field> = (0..500)
            .map(|_| shift(&g1, &mut rng, &[3.0 * sd]))
            .collect();
        assert!(ood_auc(&g1, &inside, &displaced, 0.01).unwrap() > 0.95);

        let g2 =
            GaussianMixtureEBM::isotropic(&[0.5, 0.5], &[vec![-1.0, 0.0], vec![1.0, 0.0]], var)
                .unwrap();
        let inside: Vec<Field> = (0..500).map(|_| g2.sample(&mut rng)).collect();
        let far: Vec<Field> = (0..500)
            .map(|_| shift(&g2, &mut rng, &[0.0, 5.0 * sd]))
            .collect();
        assert!(ood_auc(&g2, &inside, &far, 0.01).unwrap() > 0.99);
    }

    #[test]
    fn spearman_and_psnr() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = Field::zeros(&[4]);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&Field::filled(&[4], 2.0), &r, 2.0).unwrap().abs() < 1e-12);
        assert!((psnr(&Field::filled(&[4], 0.1), &r, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let mut rng = chain_rng(5, 0);
        let x = normal_field(&mut rng, &[16]);
        let y = normal_field(&mut rng, &[16]);
        let mse: f64 = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 16.0;
        assert!((psnr(&x, &y, 3.0).unwrap() - 10.0 * (9.0 / mse).log10()).abs() < 1e-12);
    }
}
