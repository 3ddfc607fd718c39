//! Energy-based priors and annealed Langevin posterior sampling for linear
//! inverse problems.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command-line tool live in the `alps` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cg;
pub mod data;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod fft;
pub mod field;
pub mod forward;
pub mod linalg;
pub mod rng;
pub mod schedule;
pub mod solver;
pub mod training;

pub use cg::{cg_solve, CgOutcome, SpdDescriptor, SpdOperator, SpdTerm, SymmetricOperator};
pub use diagnostics::{
    grid_posterior_oracle, helmholtz_decompose_2d, ood_auc, psnr, quality_scores, summarize,
    GridBox, GridPosterior, MismatchReport, PosteriorSummary, QualityScore,
};
pub use energy::{EnergyModel, GaussianEBM, GaussianMixtureEBM, NeuralEBM};
pub use error::{Error, Result};
pub use fft::{fft_forward, fft_inverse, FftPlan, Spectrum};
pub use field::{inner, norm2, Field};
pub use forward::{ForwardStructure, LinearForwardModel};
pub use linalg::{Cholesky, Matrix, Svd};
pub use schedule::{heun_prior_sample, schedule_levels, NoiseSchedule};
pub use solver::{
    alps_solve, alps_solve_chain, map_solve, posterior_energy, ALPSConfig, Mode, PosteriorProblem,
    PreconditionerKind, SolveResult,
};
