//! Command-line entry point. Every subcommand reads one TOML config, checks
//! and loads all inputs, then writes its outputs, a copy of the config and
//! `manifest.json` (last) into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use alps_core::diagnostics::{
    auc, cohort_scores, mann_whitney_p, median, nlpr, psnr, quality_scores, summarize, CohortStats,
};
use alps_core::solver::SolverWarning;
use alps_core::training::{EnergyTeacher, TeacherDenoiser};
use alps_core::{
    EnergyModel, Field, LinearForwardModel, Mode, NeuralEBM, PosteriorProblem, SolveResult,
};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::config::{
    load_any_field, parse, stack, unstack, DiagnoseConfig, DiagnoseTask, DistillConfig,
    MeasurementSpec, NetworkSpec, OracleCheckConfig, SamplePriorConfig, SolveConfig,
    TrainEbmConfig, TrainSpec,
};
use crate::error::{AppError, AppResult};
use crate::format::{checkpoint_bytes, field_bytes, pgm_bytes};
use crate::manifest::{NfeSummary, OutputDir};
use crate::runner::{prior_samples, run_chains, thread_pool, train_parallel};
use crate::scenarios::run_scenario;
use crate::svg;
use crate::teacher::{grid_points, RotationalTeacher};

/// Cap on individual warnings copied into the manifest.
const MAX_LISTED_WARNINGS: usize = 20;

#[derive(Debug, Parser)]
#[command(
    name = "alps",
    version,
    about = "Energy-based priors and annealed Langevin posterior sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a neural energy model by denoising score matching.
    TrainEbm(Paths),
    /// Distill a teacher denoiser into a neural energy model.
    Distill(Paths),
    /// Draw prior samples with the Heun probability-flow integrator.
    SamplePrior(Paths),
    /// Posterior sampling or MAP estimation for a linear inverse problem.
    Solve(Paths),
    /// OOD, quality, operator-mismatch or landscape diagnostics.
    Diagnose(Paths),
    /// Run a reference scenario against its oracle.
    OracleCheck(Paths),
}

#[derive(Debug, Args)]
pub struct Paths {
    /// TOML configuration file.
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Runs the tool on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(&cli.command)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("alps: {} error: {e}", e.category());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> AppResult<()> {
    match cmd {
        Command::TrainEbm(p) => train_ebm(p),
        Command::Distill(p) => distill(p),
        Command::SamplePrior(p) => sample_prior(p),
        Command::Solve(p) => solve(p),
        Command::Diagnose(p) => diagnose(p),
        Command::OracleCheck(p) => oracle_check(p),
    }
}

struct Loaded<T> {
    config: T,
    text: String,
    base: PathBuf,
}

fn load<T: DeserializeOwned>(path: &Path) -> AppResult<Loaded<T>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let config = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, text, base })
}

/// Per-phase wall-clock log, written outside the manifest.
struct Timing {
    start: Instant,
    rows: String,
}

impl Timing {
    fn new() -> Self {
        Timing {
            start: Instant::now(),
            rows: String::from("phase,seconds\n"),
        }
    }

    fn mark(&mut self, phase: &str) {
        let _ = writeln!(
            self.rows,
            "{phase},{:.6}",
            self.start.elapsed().as_secs_f64()
        );
    }

    fn write(&self, out: &OutputDir) -> AppResult<()> {
        out.write_unlisted("timing.csv", self.rows.as_bytes())
    }
}

fn open_output(root: &Path, config_text: &str) -> AppResult<OutputDir> {
    let mut out = OutputDir::create(root)?;
    out.write("config.toml", config_text.as_bytes())?;
    Ok(out)
}

fn finish(
    out: OutputDir,
    timing: &mut Timing,
    subcommand: &str,
    text: &str,
    seed: u64,
) -> AppResult<()> {
    timing.mark("total");
    timing.write(&out)?;
    out.finish(subcommand, text, seed)?;
    Ok(())
}

fn push_warnings(out: &mut OutputDir, label: &str, warnings: &[SolverWarning]) {
    for w in warnings {
        let line = match w {
            SolverWarning::CgNotConverged {
                scale,
                step,
                relative_residual,
            } => format!("{label}: CG stopped at scale {scale} step {step} with relative residual {relative_residual:e}"),
            SolverWarning::LipschitzViolation {
                scale,
                step,
                relative_increase,
            } => format!(
                "{label}: C_t increased by {relative_increase:e} (relative) at scale {scale} step {step}; raise the Lipschitz bound"
            ),
        };
        out.warnings.push(line);
    }
}

fn cap_warnings(out: &mut OutputDir) {
    let n = out.warnings.len();
    if n > MAX_LISTED_WARNINGS {
        out.warnings.truncate(MAX_LISTED_WARNINGS);
        out.warnings.push(format!(
            "{} further warnings omitted",
            n - MAX_LISTED_WARNINGS
        ));
    }
}

fn field_preview(out: &mut OutputDir, name: &str, f: &Field) -> AppResult<()> {
    if f.shape().len() == 2 {
        let lo = f.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = f
            .as_slice()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        out.write(&format!("{name}.pgm"), &pgm_bytes(f, lo, hi)?)?;
    }
    Ok(())
}

fn check_uniform_shape(data: &[Field], key: &str) -> AppResult<Vec<usize>> {
    let shape = data[0].shape().to_vec();
    if data.iter().any(|d| d.shape() != shape.as_slice()) {
        return Err(AppError::config(key, "all samples must share one shape"));
    }
    Ok(shape)
}

// ---------------------------------------------------------------------------
// Training

fn run_training(
    out: &mut OutputDir,
    model: &mut NeuralEBM,
    data: &[Field],
    teacher: Option<&dyn TeacherDenoiser>,
    train: &TrainSpec,
    seed: u64,
    timing: &mut Timing,
) -> AppResult<()> {
    let cfg = train.build(seed)?;
    let every = train.checkpoint_every.unwrap_or(0);
    let mut log = String::from("step,loss\n");
    let mut snapshots = Vec::new();
    train_parallel(model, data, teacher, &cfg, |step, loss, m| {
        let _ = writeln!(log, "{step},{loss:?}");
        if every > 0 && (step + 1) % every == 0 && step + 1 < cfg.steps {
            snapshots.push((step + 1, checkpoint_bytes(m)));
        }
        Ok(())
    })?;
    timing.mark("train");
    for (step, bytes) in snapshots {
        out.write(&format!("checkpoints/step_{step:06}.alpsm"), &bytes)?;
    }
    out.write("model.alpsm", &checkpoint_bytes(model))?;
    out.write("train_log.csv", log.as_bytes())?;
    Ok(())
}

fn init_network(network: &NetworkSpec, shape: &[usize], seed: u64) -> AppResult<NeuralEBM> {
    let mut rng = alps_core::rng::chain_rng(seed, u64::MAX - 2);
    Ok(NeuralEBM::with_hidden(
        shape,
        &network.hidden,
        network.sigma_data,
        &mut rng,
    )?)
}

fn train_ebm(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c,
        text,
        base,
    } = load::<TrainEbmConfig>(&paths.config)?;
    c.validate(&base)?;
    let data = c.data.build(&base, c.seed)?;
    let shape = check_uniform_shape(&data, "data")?;
    let mut model = init_network(&c.network, &shape, c.seed)?;
    timing.mark("load");
    let mut out = open_output(&paths.out, &text)?;
    run_training(
        &mut out,
        &mut model,
        &data,
        None,
        &c.train,
        c.seed,
        &mut timing,
    )?;
    finish(out, &mut timing, "train-ebm", &text, c.seed)
}

fn distill(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c,
        text,
        base,
    } = load::<DistillConfig>(&paths.config)?;
    c.validate(&base)?;
    let data = c.data.build(&base, c.seed)?;
    let shape = check_uniform_shape(&data, "data")?;
    let base_model: Arc<dyn EnergyModel> = c.teacher.model.build(&base)?;
    if base_model.shape() != shape.as_slice() {
        return Err(AppError::config(
            "teacher.model",
            "shape differs from the training data",
        ));
    }
    let rotational = if c.teacher.rotation > 0.0 {
        if shape != [2] {
            return Err(AppError::config(
                "teacher.rotation",
                "rotational teachers need 2-D data",
            ));
        }
        Some(RotationalTeacher::relative(
            base_model.clone(),
            c.teacher.rotation_half_width,
            c.teacher.rotation,
            c.teacher.rotation_t,
            64,
        )?)
    } else {
        None
    };
    let energy_teacher = EnergyTeacher(base_model.as_ref());
    let teacher: &dyn TeacherDenoiser = match &rotational {
        Some(r) => r,
        None => &energy_teacher,
    };
    let mut model = init_network(&c.network, &shape, c.seed)?;
    timing.mark("load");
    let mut out = open_output(&paths.out, &text)?;
    run_training(
        &mut out,
        &mut model,
        &data,
        Some(teacher),
        &c.train,
        c.seed,
        &mut timing,
    )?;
    if let Some(r) = &rotational {
        out.write_json(
            "teacher.json",
            &json!({ "rotation_strength": r.strength() }),
        )?;
    }
    finish(out, &mut timing, "distill", &text, c.seed)
}

// ---------------------------------------------------------------------------
// Sampling and solving

fn sample_prior(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c,
        text,
        base,
    } = load::<SamplePriorConfig>(&paths.config)?;
    c.validate(&base)?;
    let model = c.model.build(&base)?;
    let schedule = c.schedule.build()?;
    timing.mark("load");
    let samples = prior_samples(model.as_ref(), &schedule, c.seed, c.samples)?;
    timing.mark("sample");
    let xs: Vec<Field> = samples.iter().map(|s| s.x.clone()).collect();
    let mut csv = String::from("index,energy\n");
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(csv, "{i},{:?}", model.energy(x, schedule.sigma_min)?);
    }
    let mut out = open_output(&paths.out, &text)?;
    out.write("samples.alpsf", &field_bytes(&stack(&xs)?))?;
    out.write("energies.csv", csv.as_bytes())?;
    if model.shape() == [2] {
        let pts: Vec<[f64; 2]> = xs
            .iter()
            .map(|x| [x.as_slice()[0], x.as_slice()[1]])
            .collect();
        out.write(
            "samples.svg",
            svg::scatter("prior samples", bounds_of(&pts), &[&pts], &[]).as_bytes(),
        )?;
    }
    let per = samples[0].nfe;
    out.nfe = Some(NfeSummary {
        per_chain: per,
        total: samples.iter().map(|s| s.nfe).sum(),
    });
    finish(out, &mut timing, "sample-prior", &text, c.seed)
}

fn bounds_of(pts: &[[f64; 2]]) -> svg::Bounds {
    let mut b = svg::Bounds {
        x: (f64::INFINITY, f64::NEG_INFINITY),
        y: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for p in pts {
        b.x = (b.x.0.min(p[0]), b.x.1.max(p[0]));
        b.y = (b.y.0.min(p[1]), b.y.1.max(p[1]));
    }
    let pad = |r: (f64, f64)| {
        let w = (r.1 - r.0).max(1e-9) * 0.05;
        (r.0 - w, r.1 + w)
    };
    svg::Bounds {
        x: pad(b.x),
        y: pad(b.y),
    }
}

struct Problem {
    model: Arc<dyn EnergyModel>,
    forward: LinearForwardModel,
    truth: Option<Field>,
    y: Field,
    eta: f64,
}

impl Problem {
    fn posterior(&self) -> AppResult<PosteriorProblem<'_>> {
        Ok(PosteriorProblem::new(
            self.model.as_ref(),
            &self.forward,
            &self.y,
            self.eta,
        )?)
    }
}

fn build_problem(
    model: Arc<dyn EnergyModel>,
    forward: LinearForwardModel,
    m: &MeasurementSpec,
    base: &Path,
) -> AppResult<Problem> {
    let truth = m.truth(base, model.shape())?;
    let y = m.measurement(base, &forward, truth.as_ref())?;
    Ok(Problem {
        model,
        forward,
        truth,
        y,
        eta: m.eta,
    })
}

fn trace_csv(runs: &[SolveResult], levels: &[f64], k: usize) -> String {
    let mut s = String::from("chain,step,scale,t,c_t\n");
    for (c, r) in runs.iter().enumerate() {
        for (i, v) in r.trace.iter().enumerate() {
            let _ = writeln!(s, "{c},{i},{},{:?},{v:?}", i / k, levels[i / k]);
        }
    }
    s
}

fn cg_csv(runs: &[SolveResult]) -> String {
    let mut s = String::from("chain,scale,step,iterations,relative_residual,converged\n");
    for (c, r) in runs.iter().enumerate() {
        for g in &r.cg_log {
            let _ = writeln!(
                s,
                "{c},{},{},{},{:?},{}",
                g.scale, g.step, g.iterations, g.relative_residual, g.converged
            );
        }
    }
    s
}

fn solve(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c,
        text,
        base,
    } = load::<SolveConfig>(&paths.config)?;
    c.validate(&base)?;
    let model = c.model.build(&base)?;
    let forward = c.operator.build(&base, model.shape())?;
    let problem = build_problem(model, forward, &c.measurement, &base)?;
    let schedule = c.schedule.build()?;
    let cfg = c.solver.build(schedule, &problem.forward, c.seed)?;
    let mut map_cfg = cfg.clone();
    map_cfg.mode = Mode::Map;
    let p = problem.posterior()?;
    timing.mark("load");

    let chains = if cfg.mode == Mode::Map {
        1
    } else {
        c.solver.chains
    };
    let runs = run_chains(&p, &cfg, chains)?;
    timing.mark("chains");
    let map = if cfg.mode == Mode::Map {
        runs[0].clone()
    } else {
        alps_core::map_solve(&p, &map_cfg)?
    };
    timing.mark("map");

    let mut out = open_output(&paths.out, &text)?;
    let xs: Vec<Field> = runs.iter().map(|r| r.final_x.clone()).collect();
    let t_eval = schedule.sigma_min;
    if cfg.mode == Mode::Sample {
        if c.solver.save_samples {
            for (i, x) in xs.iter().enumerate() {
                out.write(&format!("samples/sample_{i:05}.alpsf"), &field_bytes(x))?;
            }
        }
        let (mmse, std) = if xs.len() >= 2 {
            let s = summarize(&xs, &map.final_x)?;
            (s.mmse, Some(s.pixel_std))
        } else {
            (xs[0].clone(), None)
        };
        out.write("mmse.alpsf", &field_bytes(&mmse))?;
        field_preview(&mut out, "mmse", &mmse)?;
        if let Some(std) = &std {
            out.write("std.alpsf", &field_bytes(std))?;
            field_preview(&mut out, "std", std)?;
        }
    }
    out.write("map.alpsf", &field_bytes(&map.final_x))?;
    field_preview(&mut out, "map", &map.final_x)?;

    let peak = c.measurement.psnr_peak.or_else(|| {
        problem.truth.as_ref().map(|t| {
            let s = t.as_slice();
            s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - s.iter().copied().fold(f64::INFINITY, f64::min)
        })
    });
    let scores = quality_scores(&p, &xs, t_eval)?;
    let mut samples = Vec::with_capacity(xs.len());
    for (i, (x, q)) in xs.iter().zip(&scores).enumerate() {
        let psnr_db = match (&problem.truth, peak) {
            (Some(t), Some(pk)) => Some(psnr(x, t, pk)?),
            _ => None,
        };
        samples.push(json!({
            "index": i, "nlpr": q.nlpr, "nlpo": q.nlpo, "z_nlpr": q.z_nlpr, "z_nlpo": q.z_nlpo, "psnr": psnr_db,
        }));
    }
    let map_psnr = match (&problem.truth, peak) {
        (Some(t), Some(pk)) => Some(psnr(&map.final_x, t, pk)?),
        _ => None,
    };
    out.write_json(
        "summary.json",
        &json!({
            "mode": if cfg.mode == Mode::Map { "map" } else { "sample" },
            "chains": chains,
            "t_eval": t_eval,
            "operator": problem.forward.structure_name(),
            "preconditioner": cfg.preconditioner.name(),
            "degenerate_cohort": scores.first().map(|q| q.degenerate_cohort),
            "map_psnr": map_psnr,
            "samples": samples,
        }),
    )?;
    let levels = schedule.levels();
    out.write("trace.csv", trace_csv(&runs, &levels, cfg.k).as_bytes())?;
    out.write("cg.csv", cg_csv(&runs).as_bytes())?;
    if cfg.mode == Mode::Sample {
        out.write(
            "map_trace.csv",
            trace_csv(std::slice::from_ref(&map), &levels, cfg.k).as_bytes(),
        )?;
    }

    for (i, r) in runs.iter().enumerate() {
        push_warnings(&mut out, &format!("chain {i}"), &r.warnings);
    }
    if cfg.mode == Mode::Sample {
        push_warnings(&mut out, "map", &map.warnings);
    }
    cap_warnings(&mut out);
    let total: usize = runs.iter().map(|r| r.nfe).sum::<usize>()
        + if cfg.mode == Mode::Sample { map.nfe } else { 0 };
    out.nfe = Some(NfeSummary {
        per_chain: runs[0].nfe,
        total,
    });
    timing.mark("write");
    finish(out, &mut timing, "solve", &text, c.seed)
}

// ---------------------------------------------------------------------------
// Diagnostics

fn histogram_csv(cohorts: &[(&str, &[f64])], bins: usize) -> String {
    let all = cohorts.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let counts: Vec<Vec<usize>> = cohorts
        .iter()
        .map(|(_, v)| svg::histogram_counts(v, lo, hi, bins))
        .collect();
    let mut s = String::from("bin_lo,bin_hi");
    for (name, _) in cohorts {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    let w = (hi - lo) / bins as f64;
    for b in 0..bins {
        let _ = write!(s, "{:?},{:?}", lo + b as f64 * w, lo + (b + 1) as f64 * w);
        for c in &counts {
            let _ = write!(s, ",{}", c[b]);
        }
        s.push('\n');
    }
    s
}

fn cohort_json(s: &CohortStats) -> serde_json::Value {
    json!({ "median_nlpr": s.median_nlpr, "median_nlpo": s.median_nlpo, "nlpr": s.nlpr, "nlpo": s.nlpo })
}

fn diagnose(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c,
        text,
        base,
    } = load::<DiagnoseConfig>(&paths.config)?;
    c.validate(&base)?;
    let model = c.model.build(&base)?;
    let t = c.t_eval;
    let load_cohort = |f: &Path| -> AppResult<Vec<Field>> {
        let xs = unstack(&load_any_field(&crate::config::resolve(&base, f))?)?;
        for x in &xs {
            x.expect_shape(model.shape())
                .map_err(|e| AppError::config("task", format!("{}: {e}", f.display())))?;
        }
        Ok(xs)
    };
    match &c.task {
        DiagnoseTask::Ood { in_file, out_file } => {
            let inside = load_cohort(in_file)?;
            let outside = load_cohort(out_file)?;
            timing.mark("load");
            let score = |xs: &[Field]| {
                xs.iter()
                    .map(|x| nlpr(model.as_ref(), x, t))
                    .collect::<alps_core::Result<Vec<_>>>()
            };
            let (si, so) = (score(&inside)?, score(&outside)?);
            let a = auc(&si, &so)?;
            let mut out = open_output(&paths.out, &text)?;
            out.write_json(
                "ood.json",
                &json!({
                    "t_eval": t, "auc": a, "median_nlpr_in": median(&si), "median_nlpr_out": median(&so),
                    "nlpr_in": si, "nlpr_out": so,
                }),
            )?;
            let cohorts = [("in", si.as_slice()), ("out", so.as_slice())];
            out.write("histogram.csv", histogram_csv(&cohorts, c.bins).as_bytes())?;
            if c.svg {
                out.write(
                    "histogram.svg",
                    svg::histograms("NLPr", &cohorts, c.bins).as_bytes(),
                )?;
            }
            finish(out, &mut timing, "diagnose", &text, c.seed)
        }
        DiagnoseTask::Quality {
            samples_file,
            operator,
            measurement,
        } => {
            let xs = load_cohort(samples_file)?;
            let forward = operator.build(&base, model.shape())?;
            let problem = build_problem(model.clone(), forward, measurement, &base)?;
            let p = problem.posterior()?;
            timing.mark("load");
            let scores = quality_scores(&p, &xs, t)?;
            let mut out = open_output(&paths.out, &text)?;
            let rows: Vec<_> = scores
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let ps = problem.truth.as_ref().zip(measurement.psnr_peak).map(|(tr, pk)| psnr(&xs[i], tr, pk));
                    Ok(json!({
                        "index": i, "nlpr": q.nlpr, "nlpo": q.nlpo, "z_nlpr": q.z_nlpr, "z_nlpo": q.z_nlpo,
                        "psnr": ps.transpose()?,
                    }))
                })
                .collect::<AppResult<_>>()?;
            out.write_json(
                "quality.json",
                &json!({
                    "t_eval": t,
                    "degenerate_cohort": scores.first().map(|q| q.degenerate_cohort),
                    "samples": rows,
                }),
            )?;
            let nr: Vec<f64> = scores.iter().map(|q| q.nlpr).collect();
            let no: Vec<f64> = scores.iter().map(|q| q.nlpo).collect();
            out.write(
                "nlpr_histogram.csv",
                histogram_csv(&[("nlpr", &nr)], c.bins).as_bytes(),
            )?;
            out.write(
                "nlpo_histogram.csv",
                histogram_csv(&[("nlpo", &no)], c.bins).as_bytes(),
            )?;
            if c.svg {
                out.write(
                    "nlpo_histogram.svg",
                    svg::histograms("NLPo", &[("nlpo", &no)], c.bins).as_bytes(),
                )?;
            }
            finish(out, &mut timing, "diagnose", &text, c.seed)
        }
        DiagnoseTask::Mismatch {
            operator,
            wrong_operator,
            measurement,
            schedule,
            solver,
        } => {
            let correct = operator.build(&base, model.shape())?;
            let wrong = wrong_operator.build(&base, model.shape())?;
            if wrong.output_shape() != correct.output_shape() {
                return Err(AppError::config(
                    "task.wrong_operator",
                    "output shape differs from task.operator",
                ));
            }
            let problem = build_problem(model.clone(), correct, measurement, &base)?;
            let schedule = schedule.build()?;
            let cfg_c = solver.build(schedule, &problem.forward, c.seed)?;
            let cfg_w = solver.build(schedule, &wrong, c.seed)?;
            if cfg_c.mode != Mode::Sample {
                return Err(AppError::config(
                    "task.solver.mode",
                    "mismatch checks need sample mode",
                ));
            }
            let pc = problem.posterior()?;
            let pw =
                PosteriorProblem::new(problem.model.as_ref(), &wrong, &problem.y, problem.eta)?;
            timing.mark("load");
            let t_eval = schedule.sigma_min;
            let run =
                |p: &PosteriorProblem<'_>, cfg| -> AppResult<(CohortStats, Vec<SolveResult>)> {
                    let runs = run_chains(p, cfg, solver.chains)?;
                    let xs: Vec<Field> = runs.iter().map(|r| r.final_x.clone()).collect();
                    Ok((cohort_scores(p, &xs, t_eval)?, runs))
                };
            let (sc, rc) = run(&pc, &cfg_c)?;
            let (sw, rw) = run(&pw, &cfg_w)?;
            timing.mark("chains");
            let p_value = if solver.chains >= 2 {
                Some(mann_whitney_p(&sc.nlpo, &sw.nlpo)?)
            } else {
                None
            };
            let mut out = open_output(&paths.out, &text)?;
            out.write_json(
                "mismatch.json",
                &json!({
                    "t_eval": t_eval,
                    "nlpo_p_value": p_value,
                    "detects_mismatch": sw.median_nlpo > sc.median_nlpo && p_value.is_some_and(|p| p < 0.05),
                    "correct": cohort_json(&sc),
                    "wrong": cohort_json(&sw),
                }),
            )?;
            let cohorts = [
                ("correct", sc.nlpo.as_slice()),
                ("wrong", sw.nlpo.as_slice()),
            ];
            out.write(
                "nlpo_histogram.csv",
                histogram_csv(&cohorts, c.bins).as_bytes(),
            )?;
            if c.svg {
                out.write(
                    "nlpo_histogram.svg",
                    svg::histograms("NLPo", &cohorts, c.bins).as_bytes(),
                )?;
            }
            for (label, runs) in [("correct", &rc), ("wrong", &rw)] {
                for (i, r) in runs.iter().enumerate() {
                    push_warnings(&mut out, &format!("{label} chain {i}"), &r.warnings);
                }
            }
            cap_warnings(&mut out);
            let per = rc[0].nfe;
            out.nfe = Some(NfeSummary {
                per_chain: per,
                total: rc.iter().chain(&rw).map(|r| r.nfe).sum(),
            });
            finish(out, &mut timing, "diagnose", &text, c.seed)
        }
        DiagnoseTask::Landscape {
            half_width,
            resolution,
            trajectory_file,
        } => {
            if model.shape() != [2] {
                return Err(AppError::config("task", "landscapes need a 2-D model"));
            }
            let path = match trajectory_file {
                Some(f) => load_cohort(f)?
                    .iter()
                    .map(|x| [x.as_slice()[0], x.as_slice()[1]])
                    .collect(),
                None => Vec::new(),
            };
            timing.mark("load");
            let n = *resolution;
            let pts = grid_points(*half_width, n);
            let energies = pts
                .iter()
                .map(|p| model.energy(&Field::from_slice(p)?, t))
                .collect::<alps_core::Result<Vec<_>>>()?;
            let mut csv = String::from("x0,x1,energy\n");
            for (p, e) in pts.iter().zip(&energies) {
                let _ = writeln!(csv, "{:?},{:?},{e:?}", p[0], p[1]);
            }
            let mut out = open_output(&paths.out, &text)?;
            out.write("landscape.csv", csv.as_bytes())?;
            out.write(
                "landscape.alpsf",
                &field_bytes(&Field::new(&[n, n], energies.clone())?),
            )?;
            if c.svg {
                // rows follow x0; draw x1 across and x0 upwards
                let mut img = vec![0.0; n * n];
                let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
                for r in 0..n {
                    for col in 0..n {
                        img[(n - 1 - r) * n + col] = -(energies[r * n + col] - lo);
                    }
                }
                out.write(
                    "landscape.svg",
                    svg::heatmap(
                        "exp(-E) landscape",
                        &img.iter().map(|v| v.exp()).collect::<Vec<_>>(),
                        n,
                        n,
                    )
                    .as_bytes(),
                )?;
                if !path.is_empty() {
                    let h = *half_width;
                    let b = svg::Bounds {
                        x: (-h, h),
                        y: (-h, h),
                    };
                    out.write(
                        "trajectory.svg",
                        svg::scatter("trajectory", b, &[], &[&path]).as_bytes(),
                    )?;
                }
            }
            finish(out, &mut timing, "diagnose", &text, c.seed)
        }
    }
}

fn oracle_check(paths: &Paths) -> AppResult<()> {
    let mut timing = Timing::new();
    let Loaded {
        config: c, text, ..
    } = load::<OracleCheckConfig>(&paths.config)?;
    c.validate()?;
    let report = run_scenario(&c.scenario, c.seed, c.scale)?;
    timing.mark("scenario");
    for check in &report.checks {
        println!("{}", check.line());
    }
    let mut out = open_output(&paths.out, &text)?;
    out.write_json("report.json", &report)?;
    finish(out, &mut timing, "oracle-check", &text, c.seed)?;
    if report.pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        Err(AppError::OracleFailed(failed.join("; ")))
    }
}
