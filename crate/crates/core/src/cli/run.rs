//! Run one configured experiment end to end and write its artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::{
    energy_distance, error_metrics, estimate_z, free_energy, permutation_threshold,
    EnergyTrace,
};
use crate::cli::config::{Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::field::{read_checkpoint, write_checkpoint, Baseline, Checkpoint, Field, Init, VelocityField};
use crate::flow::{initial_scores, rollout, RolloutOptions, TimeGrid, Trajectory};
use crate::problems::{Potential, ProblemSpec, System};
use crate::reference::{
    euler_maruyama, riemann_partition, uld_covariance_rk4, Ensemble, GaussianRef, OuTrueField,
    RiemannOptions, UldTrueField,
};
use crate::rng;
use crate::theory::{gd_run, LinearParams, OneStepProblem, TheorySummary};
use crate::train::{
    train_multi_stage, write_loss_csv, write_timing_csv, AdamConfig, TrainPlan, TrainSetup,
};

/// What a run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// headline numbers, in the order they were computed
    pub summary: Vec<(String, f64)>,
}

impl RunReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn note(&mut self, key: &str, value: f64) {
        self.summary.push((key.to_string(), value));
    }
}

struct Out<'a> {
    dir: &'a Path,
    report: RunReport,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.report.files.push(path.clone());
        Ok(BufWriter::new(File::create(path)?))
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    // build everything that can fail on bad input before touching the disk
    let dir = cfg.output_dir.clone();
    if cfg.experiment == Experiment::TheoryOu {
        let problem = OneStepProblem::random(cfg.params.theory_dim, cfg.seed)?;
        fs::create_dir_all(&dir)?;
        let mut out = Out {
            dir: &dir,
            report: RunReport {
                output_dir: dir.clone(),
                ..Default::default()
            },
        };
        run_theory(cfg, &problem, &mut out)?;
        write_manifest(cfg, &mut out)?;
        return Ok(out.report);
    }

    let spec = cfg.problem()?;
    let p = &cfg.params;
    let n = spec.state_dim();
    let rho0 = GaussianRef::isotropic(vec![0.0; n], p.init_var)?;
    let grid = TimeGrid::new(0.0, p.dt, p.n_t, p.n_stages)?;
    let loaded = match (&cfg.checkpoint, cfg.eval_only && !p.analytic_field) {
        (Some(path), true) => Some(load_fields(path, &spec, p.n_stages)?),
        (None, true) => {
            return Err(Error::input(
                "eval-only runs need a checkpoint or analytic_field = true",
            ))
        }
        _ => None,
    };

    fs::create_dir_all(&dir)?;
    let mut out = Out {
        dir: &dir,
        report: RunReport {
            output_dir: dir.clone(),
            ..Default::default()
        },
    };

    let analytic: Option<Box<dyn Field>> = if p.analytic_field {
        Some(analytic_field(cfg, &spec, &grid)?)
    } else {
        None
    };

    let trained: Vec<VelocityField> = match (analytic.is_some(), loaded) {
        (true, _) => Vec::new(),
        (false, Some(fields)) => fields,
        (false, None) => train(cfg, &spec, &rho0, &mut out)?,
    };
    let fields: Vec<&dyn Field> = match &analytic {
        Some(f) => vec![f.as_ref(); p.n_stages],
        None => trained.iter().map(|f| f as &dyn Field).collect(),
    };

    // evaluation on fresh particles
    let xs: Vec<Vec<f64>> = (0..p.eval_particles)
        .map(|i| rho0.sample(&mut rng::stream(cfg.seed, "eval", &[i as u64])))
        .collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let traj = rollout(
        &init,
        &fields,
        &grid,
        RolloutOptions {
            scheme: p.scheme,
            record_every: 1,
        },
    )?;
    traj_subsample(&traj, p.trajectory_every).write_csv(out.create("trajectory.csv")?)?;

    if spec.has_stationary_density() {
        energy_and_z(cfg, &spec, &traj, &mut out)?;
    }
    if let Some(reference) = reference_solution(cfg, &spec, &grid)? {
        let m = error_metrics(&fields, &grid, reference.field.as_ref(), &reference.density, &traj)?;
        let mut w = csv::Writer::from_writer(out.create("errors.csv")?);
        w.write_record(["metric", "value"])?;
        for (k, v) in [("err_f", m.err_f), ("err_rho", m.err_rho), ("err_s", m.err_s)] {
            w.write_record(&[k.to_string(), format!("{v:e}")])?;
            out.report.note(k, v);
        }
        w.flush()?;
    }
    if cfg.experiment.is_chaotic() || cfg.experiment == Experiment::LangevinDoublewell {
        compare_with_em(cfg, &spec, &rho0, &traj, &mut out)?;
    }
    write_manifest(cfg, &mut out)?;
    Ok(out.report)
}

fn plan(cfg: &ExperimentConfig) -> TrainPlan {
    let p = &cfg.params;
    TrainPlan {
        n_x: p.n_x,
        steps_per_stage: p.n_t,
        dt: p.dt,
        stages: p.n_stages,
        lr: p.lr,
        n_step0: p.n_step0,
        n_step: p.n_step,
        seed: cfg.seed,
        adam: AdamConfig::default(),
        resample: p.resample,
        scheme: p.scheme,
        prefix_pool: p.prefix_pool,
    }
}

fn train(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    rho0: &GaussianRef,
    out: &mut Out<'_>,
) -> Result<Vec<VelocityField>> {
    let plan = plan(cfg);
    let setup = TrainSetup {
        spec,
        rho0,
        plan: &plan,
    };
    let init = VelocityField::for_problem(spec, cfg.params.hidden, cfg.seed, Init::ScaledUniform)?;
    let dir = out.dir.join("checkpoints");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let result = train_multi_stage(&setup, init, |m, f| {
        let path = dir.join(format!("stage_{m}.ckpt"));
        write_checkpoint(BufWriter::new(File::create(&path)?), &Checkpoint::of(f))?;
        written.push(path);
        Ok(())
    })?;
    out.report.files.extend(written);
    write_loss_csv(out.create("loss.csv")?, &result.history)?;
    write_timing_csv(out.create("timing.csv")?, &result.history)?;
    let final_loss = result.history.last().map_or(f64::NAN, |r| r.loss);
    out.report.note("final_loss", final_loss);
    for m in 1..=plan.stages {
        if let Some(r) = result.history.iter().rev().find(|r| r.stage == m) {
            out.report.note(&format!("stage_{m}_loss"), r.loss);
        }
    }
    Ok(result.fields)
}

/// Load `stage_<m>.ckpt` files from a directory, or a single file for a
/// one-stage run.
fn load_fields(path: &Path, spec: &ProblemSpec, stages: usize) -> Result<Vec<VelocityField>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        (1..=stages).map(|m| path.join(format!("stage_{m}.ckpt"))).collect()
    } else if stages == 1 {
        vec![path.to_path_buf()]
    } else {
        return Err(Error::input(format!(
            "{} stages need a checkpoint directory, got a file",
            stages
        )));
    };
    files
        .iter()
        .map(|f| {
            let ck = read_checkpoint(BufReader::new(File::open(f).map_err(|e| {
                Error::input(format!("cannot open checkpoint {}: {e}", f.display()))
            })?))?;
            let layout = spec.layout();
            if ck.dims[0] != spec.state_dim() + 1 || ck.offset != layout.offset {
                return Err(Error::input(format!(
                    "checkpoint {} does not fit this problem",
                    f.display()
                )));
            }
            ck.into_field(Baseline::Drift(spec.clone()))
        })
        .collect()
}

fn uld_cov(cfg: &ExperimentConfig, grid: &TimeGrid) -> Result<crate::reference::UldCovariance> {
    let p = &cfg.params;
    uld_covariance_rk4(
        [p.init_var, 0.0, p.init_var],
        p.gamma,
        p.beta,
        p.dt,
        grid.total_steps(),
    )
}

fn analytic_field(cfg: &ExperimentConfig, spec: &ProblemSpec, grid: &TimeGrid) -> Result<Box<dyn Field>> {
    let p = &cfg.params;
    match cfg.experiment {
        Experiment::LangevinOu => Ok(Box::new(OuTrueField::new(spec.state_dim(), p.init_var, p.eps, p.c)?)),
        Experiment::UldGaussian => Ok(Box::new(UldTrueField {
            d: p.dim,
            cov: uld_cov(cfg, grid)?,
        })),
        _ => Err(Error::Unsupported(format!(
            "no closed-form field for {}",
            cfg.experiment
        ))),
    }
}

/// Exact composed field and density, where they are known.
type DensityFn = Box<dyn Fn(f64) -> Result<GaussianRef> + Sync>;

struct Reference {
    field: Box<dyn Field>,
    density: DensityFn,
}

fn reference_solution(cfg: &ExperimentConfig, spec: &ProblemSpec, grid: &TimeGrid) -> Result<Option<Reference>> {
    let p = &cfg.params;
    Ok(match cfg.experiment {
        Experiment::LangevinOu => {
            let f = OuTrueField::new(spec.state_dim(), p.init_var, p.eps, p.c)?;
            let g = f.clone();
            Some(Reference {
                field: Box::new(f),
                density: Box::new(move |t| Ok(g.density_at(t))),
            })
        }
        Experiment::UldGaussian => {
            let cov = uld_cov(cfg, grid)?;
            let d = p.dim;
            let c2 = cov.clone();
            Some(Reference {
                field: Box::new(UldTrueField { d, cov }),
                density: Box::new(move |t| c2.gaussian(t, d)),
            })
        }
        _ => None,
    })
}

fn traj_subsample(traj: &Trajectory, every: usize) -> Trajectory {
    let last = traj.steps.len() - 1;
    let keep: Vec<usize> = (0..traj.steps.len())
        .filter(|&k| traj.steps[k] % every == 0 || k == last)
        .collect();
    Trajectory {
        steps: keep.iter().map(|&k| traj.steps[k]).collect(),
        times: keep.iter().map(|&k| traj.times[k]).collect(),
        states: keep.iter().map(|&k| traj.states[k].clone()).collect(),
    }
}

/// Exact partition function: closed form for quadratic potentials,
/// quadrature otherwise (state dimension at most three).
pub fn reference_partition(spec: &ProblemSpec) -> Result<f64> {
    use std::f64::consts::PI;
    match &spec.system {
        System::Langevin {
            potential: Potential::Quadratic,
            eps,
            ..
        } => Ok((2.0 * PI * eps).powf(spec.state_dim() as f64 / 2.0)),
        System::Uld {
            potential: Potential::Quadratic,
            beta,
            ..
        } => Ok((2.0 * PI / beta).powf(spec.state_dim() as f64 / 2.0)),
        _ => {
            let phi = |z: &[f64]| spec.stationary_potential(z).unwrap_or(f64::INFINITY);
            riemann_partition(&phi, spec.state_dim(), RiemannOptions::default())
        }
    }
}

fn energy_and_z(cfg: &ExperimentConfig, spec: &ProblemSpec, traj: &Trajectory, out: &mut Out<'_>) -> Result<()> {
    let mut trace = EnergyTrace::from_trajectory(traj, spec)?;
    if matches!(cfg.experiment, Experiment::LangevinOu | Experiment::UldGaussian) {
        let grid = TimeGrid::new(0.0, cfg.params.dt, cfg.params.n_t, cfg.params.n_stages)?;
        if let Some(r) = reference_solution(cfg, spec, &grid)? {
            trace = trace.with_reference(spec, r.density)?;
        }
    }
    trace.write_csv(out.create("energy.csv")?)?;
    out.report.note("max_free_energy_increase", trace.max_increase());
    out.report.note(
        "max_dissipation",
        trace.dissipation.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );

    let z = estimate_z(free_energy(traj.last(), spec)?);
    let mut w = out.create("z_estimate.txt")?;
    writeln!(w, "estimate = {z:.6}")?;
    out.report.note("z_estimate", z);
    match reference_partition(spec) {
        Ok(zr) => {
            let rel = (z - zr).abs() / zr;
            writeln!(w, "reference = {zr:.6}")?;
            writeln!(w, "relative_error = {rel:.6}")?;
            out.report.note("z_reference", zr);
            out.report.note("z_relative_error", rel);
        }
        Err(e) => writeln!(w, "reference unavailable: {e}")?,
    }
    w.flush()?;
    Ok(())
}

fn em_ensembles(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    rho0: &GaussianRef,
    tag: &str,
) -> Result<Ensemble> {
    let p = &cfg.params;
    let x0: Vec<Vec<f64>> = (0..p.em_paths)
        .map(|i| rho0.sample(&mut rng::stream(cfg.seed, tag, &[i as u64])))
        .collect();
    let steps = p.n_t * p.n_stages * p.em_substeps;
    let seed = rng::stream_key(cfg.seed, tag, &[]);
    euler_maruyama(spec, &x0, p.dt / p.em_substeps as f64, steps, seed, p.em_substeps)
}

fn compare_with_em(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    rho0: &GaussianRef,
    traj: &Trajectory,
    out: &mut Out<'_>,
) -> Result<()> {
    let p = &cfg.params;
    let a = em_ensembles(cfg, spec, rho0, "em-reference")?;
    a.write_csv(out.create("em_ensemble.csv")?)?;
    if !cfg.experiment.is_chaotic() {
        return Ok(());
    }
    let b = em_ensembles(cfg, spec, rho0, "em-baseline")?;
    let mut w = csv::Writer::from_writer(out.create("energy_distance.csv")?);
    w.write_record(["t", "distance", "threshold", "within"])?;
    let mut all_within = true;
    for &t in &p.snapshot_times {
        let step = (t / p.dt).round() as usize;
        let Some(flow) = traj.at_step(step) else { continue };
        let (Some(ea), Some(eb)) = (a.at_step(step * p.em_substeps), b.at_step(step * p.em_substeps))
        else {
            continue;
        };
        let xs: Vec<Vec<f64>> = flow.iter().map(|s| s.x.clone()).collect();
        let dist = energy_distance(&xs, ea)?;
        let thr = permutation_threshold(ea, eb, p.permutations, 0.99, cfg.seed)?;
        all_within &= dist <= thr;
        w.write_record(&[
            format!("{t}"),
            format!("{dist:e}"),
            format!("{thr:e}"),
            (dist <= thr).to_string(),
        ])?;
        out.report.note(&format!("energy_distance_t{t}"), dist);
        out.report.note(&format!("threshold_t{t}"), thr);
    }
    w.flush()?;
    out.report.note("energy_distance_within", if all_within { 1.0 } else { 0.0 });
    Ok(())
}

fn run_theory(cfg: &ExperimentConfig, problem: &OneStepProblem, out: &mut Out<'_>) -> Result<()> {
    let p = &cfg.params;
    let samples = problem.samples(p.theory_samples, cfg.seed)?;
    let eta = p.theory_step_fraction * problem.max_step_size();
    let run = gd_run(
        problem,
        &samples,
        LinearParams::zeros(problem.dim()),
        eta,
        p.theory_iterations,
    )?;
    run.write_csv(out.create("theory.csv")?)?;
    let summary = TheorySummary::from_run(problem, &run, eta);
    summary.write(out.create("theory_summary.txt")?)?;
    out.report.note("lambda0", summary.lambda0);
    out.report.note("eta_max", summary.eta_max);
    out.report.note("fitted_rate", summary.fitted_rate);
    out.report.note("bound_rate", summary.bound_rate);
    out.report.note("final_distance", summary.final_distance);
    Ok(())
}

fn write_manifest(cfg: &ExperimentConfig, out: &mut Out<'_>) -> Result<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut files: Vec<String> = out
        .report
        .files
        .iter()
        .filter_map(|f| f.strip_prefix(out.dir).ok())
        .map(|f| format!("{:?}", f.display().to_string()))
        .collect();
    files.sort();
    let mut w = out.create("manifest.toml")?;
    writeln!(w, "# resolved configuration; rerun with `fpflow --config manifest.toml`")?;
    for (k, v) in &out.report.summary {
        writeln!(w, "# {k} = {v:e}")?;
    }
    w.write_all(cfg.to_toml().as_bytes())?;
    writeln!(w)?;
    writeln!(w, "[run]")?;
    writeln!(w, "version = {:?}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "created_unix = {created}")?;
    writeln!(w, "threads = {}", rayon::current_num_threads())?;
    writeln!(w, "files = [{}]", files.join(", "))?;
    w.flush()?;
    Ok(())
}
