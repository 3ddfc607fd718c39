//! Parallel execution of chains, prior samples and training batches.
//!
//! Work items draw from independent streams (`chain_rng(seed, i)`) and
//! results are collected in index order, so outputs do not depend on the
//! number of threads.

use alps_core::rng::chain_rng;
use alps_core::schedule::{heun_prior_sample, PriorSample};
use alps_core::solver::{solve, ALPSConfig, PosteriorProblem, SolveResult};
use alps_core::training::{
    adam_step, draw_batch, item_loss_and_grad, prepare_distill, prepare_dsm, reduce_mean,
    AdamState, TeacherDenoiser, TrainConfig,
};
use alps_core::{EnergyModel, Error, Field, NeuralEBM, NoiseSchedule};
use rayon::prelude::*;

use crate::error::{AppError, AppResult};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ALPS_THREADS";

/// Thread pool sized by `ALPS_THREADS` (unset or 0: one per core).
pub fn thread_pool() -> AppResult<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| AppError::config(THREADS_ENV, "must be a nonnegative integer"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| AppError::config(THREADS_ENV, e.to_string()))
}

/// Runs chains `0..chains` of the configured mode.
pub fn run_chains(
    p: &PosteriorProblem<'_>,
    cfg: &ALPSConfig,
    chains: usize,
) -> AppResult<Vec<SolveResult>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|c| solve(p, cfg, c).map_err(AppError::from))
        .collect()
}

/// `n` Heun prior samples; sample `i` uses stream `i` of `seed`.
pub fn prior_samples(
    model: &dyn EnergyModel,
    s: &NoiseSchedule,
    seed: u64,
    n: usize,
) -> AppResult<Vec<PriorSample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| heun_prior_sample(model, s, &mut chain_rng(seed, i)).map_err(AppError::from))
        .collect()
}

/// Adam training with per-sample gradients computed in parallel. Batches
/// and noise draws come from the single stream `chain_rng(cfg.seed, 0)`, so
/// the result matches the sequential `alps_core::training::train` bit for
/// bit.
pub fn train_parallel(
    model: &mut NeuralEBM,
    data: &[Field],
    teacher: Option<&dyn TeacherDenoiser>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64, &NeuralEBM) -> AppResult<()>,
) -> AppResult<AdamState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data", "must not be empty").into());
    }
    let mut rng = chain_rng(cfg.seed, 0);
    let mut state = AdamState::new(model.mlp().num_params());
    for step in 0..cfg.steps {
        let batch = draw_batch(data, cfg.batch_size, &mut rng);
        let items = match teacher {
            Some(t) => prepare_distill(t, &batch, &cfg.noise, &mut rng)?,
            None => prepare_dsm(&batch, &cfg.noise, &mut rng)?,
        };
        let m: &NeuralEBM = model;
        let results = items
            .par_iter()
            .enumerate()
            .map(|(i, item)| item_loss_and_grad(m, item, i))
            .collect::<alps_core::Result<Vec<_>>>()?;
        let (loss, grad) = reduce_mean(results);
        adam_step(
            model.mlp_mut().params_mut(),
            &grad,
            &mut state,
            cfg.learning_rate,
            &cfg.adam,
        )?;
        on_step(step, loss, model)?;
    }
    Ok(state)
}
