//! TOML experiment configuration with strict key checking.
//!
//! Relative file paths are resolved against the directory of the config
//! file. Every numeric range and referenced file is checked by
//! `validate` before any computation starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use alps_core::energy::{Covariance, MixtureComponent};
use alps_core::forward::{
    gaussian_kernel, line_sampling_mask, motion_kernel, random_sampling_mask,
};
use alps_core::rng::chain_rng;
use alps_core::solver::{Carry, NoiseScale};
use alps_core::training::{NoiseLaw, TrainConfig};
use alps_core::{
    ALPSConfig, EnergyModel, Field, GaussianEBM, GaussianMixtureEBM, LinearForwardModel, Matrix,
    Mode, NoiseSchedule, PreconditionerKind,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{AppError, AppResult};
use crate::format::{load_checkpoint, load_field, load_pgm};

/// Parses `text`, reporting the key path of the first offending entry.
pub fn parse<T: DeserializeOwned>(text: &str) -> AppResult<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        AppError::config(
            if key == "." {
                "<root>".to_string()
            } else {
                key
            },
            msg,
        )
    })
}

fn check(ok: bool, key: &str, reason: &str) -> AppResult<()> {
    if ok {
        Ok(())
    } else {
        Err(AppError::config(key, reason))
    }
}

fn positive(v: f64, key: &str) -> AppResult<()> {
    check(
        v.is_finite() && v > 0.0,
        key,
        "must be a finite positive number",
    )
}

/// A path relative to the config directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn existing(base: &Path, p: &Path, key: &str) -> AppResult<PathBuf> {
    let full = resolve(base, p);
    check(
        full.is_file(),
        key,
        &format!("file `{}` does not exist", full.display()),
    )?;
    Ok(full)
}

/// Loads a field from an `ALPSF1` file or, for `.pgm` paths, an image.
pub fn load_any_field(path: &Path) -> AppResult<Field> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("pnm") => load_pgm(path),
        _ => load_field(path),
    }
}

fn exactly_one(present: &[bool], key: &str, names: &str) -> AppResult<()> {
    check(
        present.iter().filter(|&&p| p).count() == 1,
        key,
        &format!("exactly one of {names} is required"),
    )
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Gaussian {
        shape: Vec<usize>,
        mean: Option<Vec<f64>>,
        variance: Option<f64>,
        variances: Option<Vec<f64>>,
        covariance: Option<Vec<Vec<f64>>>,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variance: Option<f64>,
        covariances: Option<Vec<Vec<Vec<f64>>>>,
    },
    Neural {
        checkpoint: PathBuf,
    },
}

impl ModelSpec {
    pub fn validate(&self, base: &Path, key: &str) -> AppResult<()> {
        match self {
            ModelSpec::Gaussian {
                shape,
                mean,
                variance,
                variances,
                covariance,
            } => {
                check(
                    !shape.is_empty() && shape.iter().all(|&n| n > 0),
                    &format!("{key}.shape"),
                    "must be a nonempty list of positive extents",
                )?;
                let n: usize = shape.iter().product();
                if let Some(m) = mean {
                    check(
                        m.len() == n,
                        &format!("{key}.mean"),
                        "length must match the shape",
                    )?;
                }
                exactly_one(
                    &[
                        variance.is_some(),
                        variances.is_some(),
                        covariance.is_some(),
                    ],
                    key,
                    "`variance`, `variances`, `covariance`",
                )?;
                if let Some(v) = variance {
                    positive(*v, &format!("{key}.variance"))?;
                }
                if let Some(v) = variances {
                    check(
                        v.len() == n,
                        &format!("{key}.variances"),
                        "length must match the shape",
                    )?;
                    for x in v {
                        positive(*x, &format!("{key}.variances"))?;
                    }
                }
                if let Some(c) = covariance {
                    check(
                        c.len() == n && c.iter().all(|r| r.len() == n),
                        &format!("{key}.covariance"),
                        "must be n×n",
                    )?;
                }
                Ok(())
            }
            ModelSpec::Mixture {
                weights,
                means,
                variance,
                covariances,
            } => {
                check(
                    !weights.is_empty(),
                    &format!("{key}.weights"),
                    "must not be empty",
                )?;
                check(
                    means.len() == weights.len(),
                    &format!("{key}.means"),
                    "need one mean per weight",
                )?;
                for w in weights {
                    positive(*w, &format!("{key}.weights"))?;
                }
                let d = means[0].len();
                check(
                    d > 0 && means.iter().all(|m| m.len() == d),
                    &format!("{key}.means"),
                    "means must share one nonzero length",
                )?;
                exactly_one(
                    &[variance.is_some(), covariances.is_some()],
                    key,
                    "`variance`, `covariances`",
                )?;
                if let Some(v) = variance {
                    positive(*v, &format!("{key}.variance"))?;
                }
                if let Some(c) = covariances {
                    check(
                        c.len() == weights.len()
                            && c.iter()
                                .all(|m| m.len() == d && m.iter().all(|r| r.len() == d)),
                        &format!("{key}.covariances"),
                        "need one d×d matrix per component",
                    )?;
                }
                Ok(())
            }
            ModelSpec::Neural { checkpoint } => {
                existing(base, checkpoint, &format!("{key}.checkpoint")).map(|_| ())
            }
        }
    }

    pub fn build(&self, base: &Path) -> AppResult<Arc<dyn EnergyModel>> {
        Ok(match self {
            ModelSpec::Gaussian {
                shape,
                mean,
                variance,
                variances,
                covariance,
            } => {
                let n: usize = shape.iter().product();
                let mean = Field::new(shape, mean.clone().unwrap_or_else(|| vec![0.0; n]))?;
                let cov = match (variance, variances, covariance) {
                    (Some(v), _, _) => Covariance::isotropic(n, *v)?,
                    (_, Some(v), _) => Covariance::diagonal(v.clone())?,
                    (_, _, Some(c)) => Covariance::dense(Matrix::from_rows(c)?)?,
                    _ => unreachable!("validated"),
                };
                Arc::new(GaussianEBM::new(mean, cov)?)
            }
            ModelSpec::Mixture {
                weights,
                means,
                variance,
                covariances,
            } => match (variance, covariances) {
                (Some(v), _) => Arc::new(GaussianMixtureEBM::isotropic(weights, means, *v)?),
                (_, Some(c)) => {
                    let comps = weights
                        .iter()
                        .zip(means)
                        .zip(c)
                        .map(|((&weight, mean), cov)| {
                            Ok(MixtureComponent {
                                weight,
                                mean: mean.clone(),
                                covariance: Matrix::from_rows(cov)?,
                            })
                        })
                        .collect::<AppResult<Vec<_>>>()?;
                    Arc::new(GaussianMixtureEBM::new(comps)?)
                }
                _ => unreachable!("validated"),
            },
            ModelSpec::Neural { checkpoint } => {
                Arc::new(load_checkpoint(&resolve(base, checkpoint))?)
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    /// Pixel mask (inpainting): a 0/1 field, inline or from a file.
    Mask {
        mask: Option<Vec<f64>>,
        mask_file: Option<PathBuf>,
    },
    /// Periodic convolution with a kernel file or a generated kernel.
    Circulant {
        kernel_file: Option<PathBuf>,
        gaussian_width: Option<f64>,
        motion_length: Option<usize>,
    },
    /// Unitary FFT followed by a Hermitian-symmetric 0/1 sampling pattern.
    Fourier {
        sampling_file: Option<PathBuf>,
        acceleration: Option<usize>,
        center_lines: Option<usize>,
        density: Option<f64>,
        mask_seed: Option<u64>,
    },
    Dense {
        matrix: Option<Vec<Vec<f64>>>,
        matrix_file: Option<PathBuf>,
    },
}

impl OperatorSpec {
    pub fn validate(&self, base: &Path, key: &str) -> AppResult<()> {
        match self {
            OperatorSpec::Identity => Ok(()),
            OperatorSpec::Mask { mask, mask_file } => {
                exactly_one(
                    &[mask.is_some(), mask_file.is_some()],
                    key,
                    "`mask`, `mask_file`",
                )?;
                if let Some(f) = mask_file {
                    existing(base, f, &format!("{key}.mask_file"))?;
                }
                Ok(())
            }
            OperatorSpec::Circulant {
                kernel_file,
                gaussian_width,
                motion_length,
            } => {
                exactly_one(
                    &[
                        kernel_file.is_some(),
                        gaussian_width.is_some(),
                        motion_length.is_some(),
                    ],
                    key,
                    "`kernel_file`, `gaussian_width`, `motion_length`",
                )?;
                if let Some(f) = kernel_file {
                    existing(base, f, &format!("{key}.kernel_file"))?;
                }
                if let Some(w) = gaussian_width {
                    positive(*w, &format!("{key}.gaussian_width"))?;
                }
                if let Some(l) = motion_length {
                    check(
                        *l > 0,
                        &format!("{key}.motion_length"),
                        "must be at least 1",
                    )?;
                }
                Ok(())
            }
            OperatorSpec::Fourier {
                sampling_file,
                acceleration,
                center_lines,
                density,
                ..
            } => {
                exactly_one(
                    &[
                        sampling_file.is_some(),
                        acceleration.is_some(),
                        density.is_some(),
                    ],
                    key,
                    "`sampling_file`, `acceleration`, `density`",
                )?;
                if let Some(f) = sampling_file {
                    existing(base, f, &format!("{key}.sampling_file"))?;
                }
                if let Some(a) = acceleration {
                    check(
                        *a >= 1,
                        &format!("{key}.acceleration"),
                        "must be at least 1",
                    )?;
                }
                if center_lines.is_some() {
                    check(
                        acceleration.is_some(),
                        &format!("{key}.center_lines"),
                        "only applies with `acceleration`",
                    )?;
                }
                if let Some(d) = density {
                    check(
                        *d > 0.0 && *d <= 1.0,
                        &format!("{key}.density"),
                        "must lie in (0, 1]",
                    )?;
                }
                Ok(())
            }
            OperatorSpec::Dense {
                matrix,
                matrix_file,
            } => {
                exactly_one(
                    &[matrix.is_some(), matrix_file.is_some()],
                    key,
                    "`matrix`, `matrix_file`",
                )?;
                if let Some(f) = matrix_file {
                    existing(base, f, &format!("{key}.matrix_file"))?;
                }
                Ok(())
            }
        }
    }

    /// Builds the operator acting on fields of `shape`.
    pub fn build(&self, base: &Path, shape: &[usize]) -> AppResult<LinearForwardModel> {
        Ok(match self {
            OperatorSpec::Identity => LinearForwardModel::identity(shape),
            OperatorSpec::Mask { mask, mask_file } => {
                let m = match (mask, mask_file) {
                    (Some(v), _) => Field::new(shape, v.clone())?,
                    (_, Some(f)) => load_any_field(&resolve(base, f))?,
                    _ => unreachable!("validated"),
                };
                LinearForwardModel::mask(&m)?
            }
            OperatorSpec::Circulant {
                kernel_file,
                gaussian_width,
                motion_length,
            } => {
                let k = match (kernel_file, gaussian_width, motion_length) {
                    (Some(f), _, _) => load_any_field(&resolve(base, f))?,
                    (_, Some(w), _) => gaussian_kernel(shape, *w)?,
                    (_, _, Some(l)) => motion_kernel(shape, *l)?,
                    _ => unreachable!("validated"),
                };
                LinearForwardModel::circulant(&k)?
            }
            OperatorSpec::Fourier {
                sampling_file,
                acceleration,
                center_lines,
                density,
                mask_seed,
            } => {
                let s = match (sampling_file, acceleration, density) {
                    (Some(f), _, _) => load_any_field(&resolve(base, f))?,
                    (_, Some(a), _) => line_sampling_mask(shape, *a, center_lines.unwrap_or(0))?,
                    (_, _, Some(d)) => {
                        random_sampling_mask(shape, *d, &mut chain_rng(mask_seed.unwrap_or(0), 0))?
                    }
                    _ => unreachable!("validated"),
                };
                LinearForwardModel::fourier_undersampling(&s)?
            }
            OperatorSpec::Dense {
                matrix,
                matrix_file,
            } => {
                let m = match (matrix, matrix_file) {
                    (Some(rows), _) => Matrix::from_rows(rows)?,
                    (_, Some(f)) => {
                        let f = load_any_field(&resolve(base, f))?;
                        match *f.shape() {
                            [r, c] => Matrix::new(r, c, f.into_vec())?,
                            _ => {
                                return Err(AppError::config(
                                    "operator.matrix_file",
                                    "must hold a 2-D field",
                                ))
                            }
                        }
                    }
                    _ => unreachable!("validated"),
                };
                LinearForwardModel::dense_with_shape(m, shape)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "defaults::sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "defaults::sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
}

mod defaults {
    pub fn sigma_max() -> f64 {
        10.0
    }
    pub fn sigma_min() -> f64 {
        0.01
    }
    pub fn rho() -> f64 {
        5.0
    }
    pub fn steps() -> usize {
        50
    }
    pub fn one() -> usize {
        1
    }
    pub fn cg_iters() -> usize {
        10
    }
    pub fn cg_tol() -> f64 {
        1e-6
    }
    pub fn lipschitz() -> f64 {
        1.0
    }
    pub fn truth() -> bool {
        true
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            sigma_max: defaults::sigma_max(),
            sigma_min: defaults::sigma_min(),
            rho: defaults::rho(),
            steps: defaults::steps(),
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> AppResult<()> {
        positive(self.sigma_max, "schedule.sigma_max")?;
        positive(self.sigma_min, "schedule.sigma_min")?;
        check(
            self.sigma_max > self.sigma_min,
            "schedule.sigma_min",
            "must be below sigma_max",
        )?;
        positive(self.rho, "schedule.rho")?;
        check(self.steps >= 2, "schedule.steps", "must be at least 2")
    }

    pub fn build(&self) -> AppResult<NoiseSchedule> {
        Ok(NoiseSchedule::new(
            self.sigma_max,
            self.sigma_min,
            self.rho,
            self.steps,
        )?)
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Sample,
    Map,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerSpec {
    /// The exact inverse for the operator's structure.
    Exact,
    ExactDiagonal,
    FourierDiagonal,
    DenseSpectral,
    Diagonal,
    HighNoise,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScaleSpec {
    Sqrt,
    SqrtTwo,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CarrySpec {
    Noised,
    Denoised,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "defaults::one")]
    pub k: usize,
    #[serde(default = "SolverSpec::default_mode")]
    pub mode: ModeSpec,
    #[serde(default = "defaults::one")]
    pub chains: usize,
    #[serde(default = "defaults::cg_iters")]
    pub cg_iters: usize,
    #[serde(default = "defaults::cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "SolverSpec::default_preconditioner")]
    pub preconditioner: PreconditionerSpec,
    #[serde(default = "defaults::lipschitz")]
    pub lipschitz: f64,
    #[serde(default = "SolverSpec::default_noise_scale")]
    pub noise_scale: NoiseScaleSpec,
    #[serde(default = "SolverSpec::default_carry")]
    pub carry: CarrySpec,
    /// Write one field file per chain.
    #[serde(default = "defaults::truth")]
    pub save_samples: bool,
}

impl SolverSpec {
    fn default_mode() -> ModeSpec {
        ModeSpec::Sample
    }
    fn default_preconditioner() -> PreconditionerSpec {
        PreconditionerSpec::Exact
    }
    fn default_noise_scale() -> NoiseScaleSpec {
        NoiseScaleSpec::Sqrt
    }
    fn default_carry() -> CarrySpec {
        CarrySpec::Noised
    }

    pub fn validate(&self, key: &str) -> AppResult<()> {
        check(self.k >= 1, &format!("{key}.k"), "must be at least 1")?;
        check(
            self.chains >= 1,
            &format!("{key}.chains"),
            "must be at least 1",
        )?;
        check(
            self.cg_iters >= 1,
            &format!("{key}.cg_iters"),
            "must be at least 1",
        )?;
        positive(self.cg_tol, &format!("{key}.cg_tol"))?;
        positive(self.lipschitz, &format!("{key}.lipschitz"))
    }

    pub fn build(
        &self,
        schedule: NoiseSchedule,
        forward: &LinearForwardModel,
        seed: u64,
    ) -> AppResult<ALPSConfig> {
        let kind = match self.preconditioner {
            PreconditionerSpec::Exact => PreconditionerKind::exact_for(forward),
            PreconditionerSpec::ExactDiagonal => PreconditionerKind::ExactDiagonal,
            PreconditionerSpec::FourierDiagonal => PreconditionerKind::FourierDiagonal,
            PreconditionerSpec::DenseSpectral => PreconditionerKind::DenseSpectral,
            PreconditionerSpec::Diagonal => PreconditionerKind::DiagonalApprox,
            PreconditionerSpec::HighNoise => PreconditionerKind::HighNoiseApprox,
        };
        let mut cfg = ALPSConfig::new(schedule, kind);
        cfg.k = self.k;
        cfg.mode = match self.mode {
            ModeSpec::Sample => Mode::Sample,
            ModeSpec::Map => Mode::Map,
        };
        cfg.cg_iters = self.cg_iters;
        cfg.cg_tol = self.cg_tol;
        cfg.lipschitz = self.lipschitz;
        cfg.seed = seed;
        cfg.noise_scale = match self.noise_scale {
            NoiseScaleSpec::Sqrt => NoiseScale::Sqrt,
            NoiseScaleSpec::SqrtTwo => NoiseScale::SqrtTwo,
        };
        cfg.carry = match self.carry {
            CarrySpec::Noised => Carry::Noised,
            CarrySpec::Denoised => Carry::Denoised,
        };
        cfg.validate(forward)
            .map_err(|e| AppError::config("solver.preconditioner", e.to_string()))?;
        Ok(cfg)
    }
}

impl Default for SolverSpec {
    fn default() -> Self {
        parse("").expect("all solver fields have defaults")
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    /// Measurement noise standard deviation `η > 0`.
    pub eta: f64,
    pub y: Option<Vec<f64>>,
    pub y_file: Option<PathBuf>,
    /// Ground truth; used to simulate `y` when none is given, and as the
    /// PSNR reference.
    pub truth_file: Option<PathBuf>,
    pub truth: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_seed: u64,
    /// Peak value for PSNR; defaults to the dynamic range of the truth.
    pub psnr_peak: Option<f64>,
}

impl MeasurementSpec {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        positive(self.eta, "measurement.eta")?;
        check(
            !(self.y.is_some() && self.y_file.is_some()),
            "measurement",
            "give at most one of `y`, `y_file`",
        )?;
        check(
            !(self.truth.is_some() && self.truth_file.is_some()),
            "measurement",
            "give at most one of `truth`, `truth_file`",
        )?;
        check(
            self.y.is_some()
                || self.y_file.is_some()
                || self.truth.is_some()
                || self.truth_file.is_some(),
            "measurement",
            "need `y`/`y_file` or a truth to simulate from",
        )?;
        if let Some(f) = &self.y_file {
            existing(base, f, "measurement.y_file")?;
        }
        if let Some(f) = &self.truth_file {
            existing(base, f, "measurement.truth_file")?;
        }
        if let Some(p) = self.psnr_peak {
            positive(p, "measurement.psnr_peak")?;
        }
        Ok(())
    }

    pub fn truth(&self, base: &Path, shape: &[usize]) -> AppResult<Option<Field>> {
        let t = match (&self.truth, &self.truth_file) {
            (Some(v), _) => Some(Field::new(shape, v.clone())?),
            (_, Some(f)) => Some(load_any_field(&resolve(base, f))?),
            _ => None,
        };
        if let Some(t) = &t {
            t.expect_shape(shape)
                .map_err(|e| AppError::config("measurement.truth", e.to_string()))?;
        }
        Ok(t)
    }

    /// The measurement, simulated as `A·truth + η·ξ` when not given.
    pub fn measurement(
        &self,
        base: &Path,
        forward: &LinearForwardModel,
        truth: Option<&Field>,
    ) -> AppResult<Field> {
        let y = match (&self.y, &self.y_file, truth) {
            (Some(v), _, _) => Field::new(forward.output_shape(), v.clone())?,
            (_, Some(f), _) => load_any_field(&resolve(base, f))?,
            (_, _, Some(x)) => {
                let clean = forward.apply(x)?;
                let z = alps_core::rng::normal_field(
                    &mut chain_rng(self.noise_seed, u64::MAX),
                    clean.shape(),
                );
                clean.zip_map(&z, |a, b| a + self.eta * b)?
            }
            _ => unreachable!("validated"),
        };
        y.expect_shape(forward.output_shape())
            .map_err(|e| AppError::config("measurement.y", e.to_string()))?;
        Ok(y)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub operator: OperatorSpec,
    pub measurement: MeasurementSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub solver: SolverSpec,
}

impl SolveConfig {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        self.model.validate(base, "model")?;
        self.operator.validate(base, "operator")?;
        self.measurement.validate(base)?;
        self.schedule.validate()?;
        self.solver.validate("solver")
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Moons {
        n: usize,
        #[serde(default)]
        noise: f64,
    },
    /// Clean draws from a Gaussian mixture.
    Mixture {
        n: usize,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variance: f64,
    },
    /// Uniform draws from an axis-aligned box.
    Uniform {
        n: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// A stacked field `[n, ...]` holding one sample per leading index.
    File { path: PathBuf },
}

impl DataSpec {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        match self {
            DataSpec::Moons { n, noise } => {
                check(*n >= 2, "data.n", "need at least two samples")?;
                check(
                    noise.is_finite() && *noise >= 0.0,
                    "data.noise",
                    "must be nonnegative",
                )
            }
            DataSpec::Mixture {
                n,
                weights,
                means,
                variance,
            } => {
                check(*n >= 1, "data.n", "must be at least 1")?;
                ModelSpec::Mixture {
                    weights: weights.clone(),
                    means: means.clone(),
                    variance: Some(*variance),
                    covariances: None,
                }
                .validate(base, "data")
            }
            DataSpec::Uniform { n, lower, upper } => {
                check(*n >= 1, "data.n", "must be at least 1")?;
                check(
                    !lower.is_empty()
                        && lower.len() == upper.len()
                        && lower.iter().zip(upper).all(|(a, b)| b > a),
                    "data.upper",
                    "need matching bounds with upper > lower",
                )
            }
            DataSpec::File { path } => existing(base, path, "data.path").map(|_| ()),
        }
    }

    pub fn build(&self, base: &Path, seed: u64) -> AppResult<Vec<Field>> {
        let mut rng = chain_rng(seed, u64::MAX - 1);
        Ok(match self {
            DataSpec::Moons { n, noise } => alps_core::data::moons(*n, *noise, &mut rng),
            DataSpec::Mixture {
                n,
                weights,
                means,
                variance,
            } => {
                let g = GaussianMixtureEBM::isotropic(weights, means, *variance)?;
                (0..*n).map(|_| g.sample(&mut rng)).collect()
            }
            DataSpec::Uniform { n, lower, upper } => {
                use rand::Rng;
                (0..*n)
                    .map(|_| {
                        let v = lower
                            .iter()
                            .zip(upper)
                            .map(|(a, b)| rng.random_range(*a..*b))
                            .collect();
                        Field::from_vec(v).expect("nonempty")
                    })
                    .collect::<Vec<_>>()
            }
            DataSpec::File { path } => unstack(&load_any_field(&resolve(base, path))?)?,
        })
    }
}

/// Splits a stacked field `[n, ...]` into `n` fields. A 1-D field is read
/// as `n` scalars.
pub fn unstack(f: &Field) -> AppResult<Vec<Field>> {
    let shape = f.shape();
    let inner: Vec<usize> = if shape.len() == 1 {
        vec![1]
    } else {
        shape[1..].to_vec()
    };
    let m: usize = inner.iter().product();
    Ok(f.as_slice()
        .chunks_exact(m)
        .map(|c| Field::new(&inner, c.to_vec()))
        .collect::<alps_core::Result<Vec<_>>>()?)
}

/// Stacks equally shaped fields along a new leading axis.
pub fn stack(fields: &[Field]) -> AppResult<Field> {
    let first = fields
        .first()
        .ok_or_else(|| AppError::config("stack", "nothing to stack"))?;
    let mut shape = vec![fields.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(fields.len() * first.len());
    for f in fields {
        f.expect_shape(first.shape())?;
        data.extend_from_slice(f.as_slice());
    }
    Ok(Field::new(&shape, data)?)
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "NetworkSpec::default_sigma_data")]
    pub sigma_data: f64,
}

impl NetworkSpec {
    fn default_sigma_data() -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub p_mean: Option<f64>,
    pub p_std: Option<f64>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    /// Write an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
}

impl TrainSpec {
    pub fn build(&self, seed: u64) -> AppResult<TrainConfig> {
        let d = TrainConfig::default();
        let n = NoiseLaw::default();
        let cfg = TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            steps: self.steps.unwrap_or(d.steps),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            adam: d.adam,
            noise: NoiseLaw {
                p_mean: self.p_mean.unwrap_or(n.p_mean),
                p_std: self.p_std.unwrap_or(n.p_std),
                sigma_min: self.sigma_min.unwrap_or(n.sigma_min),
                sigma_max: self.sigma_max.unwrap_or(n.sigma_max),
            },
            seed,
        };
        cfg.validate()
            .map_err(|e| AppError::config("train", e.to_string()))?;
        if let Some(c) = self.checkpoint_every {
            check(c >= 1, "train.checkpoint_every", "must be at least 1")?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainEbmConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
}

impl TrainEbmConfig {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        self.data.validate(base)?;
        validate_network(&self.network)?;
        self.train.build(self.seed).map(|_| ())
    }
}

fn validate_network(n: &NetworkSpec) -> AppResult<()> {
    check(
        n.hidden.iter().all(|&h| h > 0),
        "network.hidden",
        "widths must be positive",
    )?;
    positive(n.sigma_data, "network.sigma_data")
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub model: ModelSpec,
    /// Strength of an added rotational field (2-D teachers only), relative
    /// to the teacher score's RMS over the square `[-h, h]²` with
    /// `h = rotation_half_width`, measured at noise level `rotation_t`.
    #[serde(default)]
    pub rotation: f64,
    #[serde(default = "TeacherSpec::default_half_width")]
    pub rotation_half_width: f64,
    #[serde(default = "TeacherSpec::default_rotation_t")]
    pub rotation_t: f64,
}

impl TeacherSpec {
    fn default_half_width() -> f64 {
        2.0
    }
    fn default_rotation_t() -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
    pub teacher: TeacherSpec,
}

impl DistillConfig {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        self.data.validate(base)?;
        validate_network(&self.network)?;
        self.teacher.model.validate(base, "teacher.model")?;
        check(
            self.teacher.rotation.is_finite() && self.teacher.rotation >= 0.0,
            "teacher.rotation",
            "must be nonnegative",
        )?;
        positive(
            self.teacher.rotation_half_width,
            "teacher.rotation_half_width",
        )?;
        positive(self.teacher.rotation_t, "teacher.rotation_t")?;
        self.train.build(self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SamplePriorConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub samples: usize,
}

impl SamplePriorConfig {
    pub fn validate(&self, base: &Path) -> AppResult<()> {
        self.model.validate(base, "model")?;
        self.schedule.validate()?;
        check(self.samples >= 1, "samples", "must be at least 1")
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiagnoseTask {
    /// NLPr of two cohorts, their ROC AUC and histograms.
    Ood { in_file: PathBuf, out_file: PathBuf },
    /// NLPr/NLPo and z-scores of a cohort of reconstructions.
    Quality {
        samples_file: PathBuf,
        operator: OperatorSpec,
        measurement: MeasurementSpec,
    },
    /// Reconstructs under a correct and a wrong operator and compares scores.
    Mismatch {
        operator: OperatorSpec,
        wrong_operator: OperatorSpec,
        measurement: MeasurementSpec,
        #[serde(default)]
        schedule: ScheduleSpec,
        #[serde(default)]
        solver: SolverSpec,
    },
    /// Energy heatmap of a 2-D model at `t_eval` over a square box.
    Landscape {
        half_width: f64,
        resolution: usize,
        trajectory_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub t_eval: f64,
    #[serde(default = "DiagnoseConfig::default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub svg: bool,
    pub task: DiagnoseTask,
}

impl DiagnoseConfig {
    fn default_bins() -> usize {
        30
    }

    pub fn validate(&self, base: &Path) -> AppResult<()> {
        self.model.validate(base, "model")?;
        positive(self.t_eval, "t_eval")?;
        check(self.bins >= 1, "bins", "must be at least 1")?;
        match &self.task {
            DiagnoseTask::Ood { in_file, out_file } => {
                existing(base, in_file, "task.in_file")?;
                existing(base, out_file, "task.out_file").map(|_| ())
            }
            DiagnoseTask::Quality {
                samples_file,
                operator,
                measurement,
            } => {
                existing(base, samples_file, "task.samples_file")?;
                operator.validate(base, "task.operator")?;
                measurement.validate(base)
            }
            DiagnoseTask::Mismatch {
                operator,
                wrong_operator,
                measurement,
                schedule,
                solver,
            } => {
                operator.validate(base, "task.operator")?;
                wrong_operator.validate(base, "task.wrong_operator")?;
                measurement.validate(base)?;
                schedule.validate()?;
                solver.validate("task.solver")
            }
            DiagnoseTask::Landscape {
                half_width,
                resolution,
                trajectory_file,
            } => {
                positive(*half_width, "task.half_width")?;
                check(*resolution >= 3, "task.resolution", "must be at least 3")?;
                if let Some(f) = trajectory_file {
                    existing(base, f, "task.trajectory_file")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: String,
    /// Scale factor on chain counts and training steps (1 = full size).
    #[serde(default = "OracleCheckConfig::default_scale")]
    pub scale: f64,
}

impl OracleCheckConfig {
    fn default_scale() -> f64 {
        1.0
    }

    pub fn validate(&self) -> AppResult<()> {
        check(
            crate::scenarios::SCENARIOS.contains(&self.scenario.as_str()),
            "scenario",
            &format!(
                "unknown scenario; expected one of {}",
                crate::scenarios::SCENARIOS.join(", ")
            ),
        )?;
        check(
            self.scale > 0.0 && self.scale <= 1.0,
            "scale",
            "must lie in (0, 1]",
        )
    }
}
