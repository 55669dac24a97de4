//! Flow-matching training: the discrete loss along the score flow, its exact
//! parameter gradient by a reverse sweep through the unrolled integrator,
//! Adam, and the single- and multi-stage drivers.
//!
//! On one stage with initial particles `(z_0, s_0)` the loss is
//!
//! ```text
//! L = (1 / N_x) sum_n sum_{j < N_t} dt |N(t_j, z_j) + k s_j[ctrl]|^2
//! ```
//!
//! where `N` is the network part of the composed field, `k` the diffusion
//! constant and `ctrl` the controlled coordinates. Both `z_j` and `s_j`
//! depend on the parameters through the Euler updates; the reverse sweep
//! propagates adjoints `(z^, s^)` backwards and needs, per step, one
//! network reverse pass and the baseline drift's second-order jet.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{DivergenceSite, Error, Result};
use crate::field::{Baseline, Field, VelocityField};
use crate::flow::{rollout, RolloutOptions, Scheme, ScoreFlowState, TimeGrid, Trajectory};
use crate::jet::JetOrder;
use crate::problems::ProblemSpec;
use crate::reference::{GaussianRef, DIVERGENCE_THRESHOLD};
use crate::rng;

/// Particles per reduction chunk; fixed so sums do not depend on threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    weights: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if weights.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::input("optimizer shapes do not match the weights"));
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..weights.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        weights[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub n_x: usize,
    pub steps_per_stage: usize,
    pub dt: f64,
    pub stages: usize,
    pub lr: f64,
    /// iterations of the first stage of a multi-stage run
    pub n_step0: usize,
    /// iterations of a single-stage run and of every later stage
    pub n_step: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// draw fresh initial particles every iteration
    pub resample: bool,
    pub scheme: Scheme,
    /// Simulate a pool of `k * n_x` particles through the frozen earlier
    /// stages once per stage and subsample it each iteration, instead of
    /// re-simulating the prefix from fresh samples every iteration.
    pub prefix_pool: Option<usize>,
}

impl TrainPlan {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.dt, self.steps_per_stage, self.stages)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.steps_per_stage == 0 || self.stages == 0 {
            return Err(Error::input("n_x, steps per stage and stages must be positive"));
        }
        if !(self.dt > 0.0) || !(self.lr > 0.0) {
            return Err(Error::input("dt and learning rate must be positive"));
        }
        if self.prefix_pool == Some(0) {
            return Err(Error::input("prefix pool factor must be positive"));
        }
        Ok(())
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    /// 1-based stage index
    pub stage: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

fn residual_scale(spec: &ProblemSpec) -> f64 {
    spec.layout().diffusion
}

/// The discrete loss of `fields` (one per stage of `grid`) on `batch`,
/// computed from a full rollout with pre-step values:
/// `(1/N_x) sum_n sum_j dt |F(t_j, z_j) - b(z_j) + k s_j|^2`, restricted to
/// the controlled coordinates.
pub fn flow_matching_loss(
    fields: &[&dyn Field],
    spec: &ProblemSpec,
    batch: &[ScoreFlowState],
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<(f64, Trajectory)> {
    let traj = rollout(
        batch,
        fields,
        grid,
        RolloutOptions {
            scheme,
            record_every: 1,
        },
    )?;
    let layout = spec.layout();
    let k = residual_scale(spec);
    let (off, m) = (layout.offset, layout.control_dim);
    let total = grid.total_steps();
    let per_particle: Vec<f64> = (0..batch.len())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for j in 0..total {
                let st = &traj.states[j][p];
                let f = fields[grid.stage_of(j)].evaluate(grid.time(j), &st.x)?;
                let b = spec.drift(&st.x)?;
                for i in off..off + m {
                    let r = f[i] - b[i] + k * st.score[i];
                    acc += grid.dt * r * r;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let loss = per_particle.iter().sum::<f64>() / batch.len() as f64;
    Ok((loss, traj))
}

/// Particle position and score at the start of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

impl From<&ScoreFlowState> for Particle {
    fn from(st: &ScoreFlowState) -> Self {
        Particle {
            z: st.x.clone(),
            s: st.score.clone(),
        }
    }
}

fn check_trainable(field: &VelocityField, spec: &ProblemSpec) -> Result<()> {
    match field.baseline() {
        Baseline::Drift(b) if b == spec => {}
        _ => {
            return Err(Error::input(
                "training needs a field whose baseline is the problem drift",
            ))
        }
    }
    let layout = spec.layout();
    if field.offset() != layout.offset || field.control_dim() != layout.control_dim {
        return Err(Error::input("network output does not match the controlled coordinates"));
    }
    Ok(())
}

fn admissible(z: &[f64], s: &[f64]) -> bool {
    z.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD)
        && s.iter().all(|v| v.is_finite())
}

/// Forward pass for one particle over one stage: fills `zs`, `ss`, `rs`
/// (positions, scores and residuals per step) and returns the loss sum.
#[allow(clippy::too_many_arguments)]
fn forward_particle(
    field: &VelocityField,
    k: f64,
    grid: &TimeGrid,
    scheme: Scheme,
    p: &Particle,
    ws: &mut crate::field::Scratch,
    zs: &mut Vec<Vec<f64>>,
    ss: &mut Vec<Vec<f64>>,
    rs: &mut Vec<Vec<f64>>,
) -> Result<f64> {
    let n = p.z.len();
    let off = field.offset();
    let m = field.control_dim();
    let dt = grid.dt;
    let mut out = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut z = p.z.clone();
    let mut s = p.s.clone();
    let mut loss = 0.0;
    zs.clear();
    ss.clear();
    rs.clear();
    for j in 0..grid.steps_per_stage {
        let t = grid.time(j);
        let base = field.baseline().jet(&z, JetOrder::First)?;
        field
            .net()
            .flow_terms_into(field.cache(), t, &z, &s[off..off + m], ws, &mut out, &mut g);
        let r: Vec<f64> = (0..m).map(|i| out[i] + k * s[off + i]).collect();
        loss += dt * r.iter().map(|x| x * x).sum::<f64>();
        zs.push(z.clone());
        ss.push(s.clone());
        rs.push(r);

        let sd = base.score_drift(&s);
        let mut f = base.value;
        for i in 0..m {
            f[off + i] += out[i];
        }
        for q in 0..n {
            z[q] += dt * f[q];
            s[q] -= dt * (sd[q] + g[q]);
        }
        if scheme == Scheme::Symplectic {
            let d = n / 2;
            for i in 0..d {
                z[i] += dt * dt * f[d + i];
            }
        }
        if !admissible(&z, &s) {
            return Err(Error::divergence(j + 1));
        }
    }
    Ok(loss)
}

struct ChunkAcc {
    loss: f64,
    grad: Vec<f64>,
    r_acc: Vec<f64>,
}

/// Loss of one stage and its exact gradient with respect to the field's
/// parameters.
pub fn stage_loss_gradient(
    field: &VelocityField,
    spec: &ProblemSpec,
    batch: &[Particle],
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<(f64, Vec<f64>)> {
    check_trainable(field, spec)?;
    if batch.is_empty() {
        return Err(Error::input("empty particle batch"));
    }
    if scheme == Scheme::Symplectic && spec.layout().kinetic_split().is_none() {
        return Err(Error::input("symplectic scheme needs an (x, v) problem"));
    }
    let k = residual_scale(spec);
    let np = field.num_params();
    let [_, h1, h2, _] = field.layer_dims();
    let chunks: Vec<ChunkAcc> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = ChunkAcc {
                loss: 0.0,
                grad: vec![0.0; np],
                r_acc: vec![0.0; h1 * h2],
            };
            let mut ws = field.scratch();
            let (mut zs, mut ss, mut rs) = (Vec::new(), Vec::new(), Vec::new());
            for (i, p) in chunk.iter().enumerate() {
                let idx = c * CHUNK + i;
                acc.loss += forward_particle(field, k, grid, scheme, p, &mut ws, &mut zs, &mut ss, &mut rs)
                    .map_err(|e| e.at_particle(idx))?;
                reverse_particle(field, k, grid, scheme, &zs, &ss, &rs, &mut ws, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let mut grad = vec![0.0; np];
    let mut r_acc = vec![0.0; h1 * h2];
    for c in &chunks {
        loss += c.loss;
        grad.iter_mut().zip(&c.grad).for_each(|(a, b)| *a += b);
        r_acc.iter_mut().zip(&c.r_acc).for_each(|(a, b)| *a += b);
    }
    field
        .net()
        .finish_gradient(field.cache(), field.offset(), &r_acc, &mut grad);
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

#[allow(clippy::too_many_arguments)]
fn reverse_particle(
    field: &VelocityField,
    k: f64,
    grid: &TimeGrid,
    scheme: Scheme,
    zs: &[Vec<f64>],
    ss: &[Vec<f64>],
    rs: &[Vec<f64>],
    ws: &mut crate::field::Scratch,
    acc: &mut ChunkAcc,
) -> Result<()> {
    let dt = grid.dt;
    let off = field.offset();
    let m = field.control_dim();
    let n = field.state_dim();
    let d = n / 2;
    let mut zh = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut af = vec![0.0; n];
    let mut a = vec![0.0; m];
    let mut zbar = vec![0.0; n];
    let mut jnu = vec![0.0; m];
    for j in (0..zs.len()).rev() {
        let (z, s, r) = (&zs[j], &ss[j], &rs[j]);
        let t = grid.time(j);
        for q in 0..n {
            u[q] = -dt * sh[q];
            af[q] = dt * zh[q];
        }
        if scheme == Scheme::Symplectic {
            for i in 0..d {
                af[d + i] += dt * dt * zh[i];
            }
        }
        for i in 0..m {
            a[i] = af[off + i] + 2.0 * dt * r[i];
        }
        field.net().backprop_into(
            field.cache(),
            t,
            z,
            &s[off..off + m],
            &u,
            &a,
            ws,
            &mut acc.grad,
            &mut acc.r_acc,
            &mut zbar,
            &mut jnu,
        );
        let base = field.baseline().jet(z, JetOrder::Second)?;
        let ch = base.comp_hessians.as_ref().expect("second order");
        let hd = base.hess_div.as_ref().expect("second order");
        let bt_af = base.jt_mul(&af);
        let b_u = base.jac_mul(&u);
        let mut zn = zh.clone();
        for q in 0..n {
            let mut v = zbar[q] + bt_af[q];
            for b in 0..n {
                let mut h = hd[q * n + b];
                for (i, si) in s.iter().enumerate() {
                    h += si * ch[(i * n + q) * n + b];
                }
                v += h * u[b];
            }
            zn[q] += v;
        }
        for q in 0..n {
            sh[q] += b_u[q];
        }
        for i in 0..m {
            sh[off + i] += jnu[i] + k * 2.0 * dt * r[i];
        }
        zh = zn;
    }
    Ok(())
}

/// Advance particles over one stage with a frozen field (positions and
/// scores only).
pub fn propagate_stage(
    field: &VelocityField,
    particles: &mut [Particle],
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<()> {
    let n = field.state_dim();
    let off = field.offset();
    let m = field.control_dim();
    particles
        .par_chunks_mut(CHUNK)
        .enumerate()
        .try_for_each(|(c, chunk)| {
            let mut ws = field.scratch();
            let mut out = vec![0.0; m];
            let mut g = vec![0.0; n];
            for (i, p) in chunk.iter_mut().enumerate() {
                for j in 0..grid.steps_per_stage {
                    let t = grid.time(j);
                    let base = field.baseline().jet(&p.z, JetOrder::First)?;
                    field.net().flow_terms_into(
                        field.cache(),
                        t,
                        &p.z,
                        &p.s[off..off + m],
                        &mut ws,
                        &mut out,
                        &mut g,
                    );
                    let sd = base.score_drift(&p.s);
                    let mut f = base.value;
                    for i in 0..m {
                        f[off + i] += out[i];
                    }
                    for q in 0..n {
                        p.z[q] += grid.dt * f[q];
                        p.s[q] -= grid.dt * (sd[q] + g[q]);
                    }
                    if scheme == Scheme::Symplectic {
                        let d = n / 2;
                        for i in 0..d {
                            p.z[i] += grid.dt * grid.dt * f[d + i];
                        }
                    }
                    if !admissible(&p.z, &p.s) {
                        return Err(Error::divergence(j + 1).at_particle(c * CHUNK + i));
                    }
                }
            }
            Ok(())
        })
}

/// `count` particles from `rho0`, particle `p` drawn from the stream
/// `(seed, tag, indices.., p)`.
pub fn sample_particles(
    rho0: &GaussianRef,
    count: usize,
    seed: u64,
    tag: &str,
    indices: &[u64],
) -> Result<Vec<Particle>> {
    let mut idx = indices.to_vec();
    idx.push(0);
    (0..count)
        .map(|p| {
            *idx.last_mut().expect("nonempty") = p as u64;
            let mut rng = rng::stream(seed, tag, &idx);
            let z = rho0.sample(&mut rng);
            let s = rho0.score(&z)?;
            Ok(Particle { z, s })
        })
        .collect()
}

/// Trained per-stage fields and the loss history.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub fields: Vec<VelocityField>,
    pub history: Vec<LossRecord>,
}

/// Everything a training run needs besides the plan.
pub struct TrainSetup<'a> {
    pub spec: &'a ProblemSpec,
    pub rho0: &'a GaussianRef,
    pub plan: &'a TrainPlan,
}

fn divergence_at_stage(e: Error, stage: usize) -> Error {
    e.at_stage(stage)
}

fn train_stage(
    setup: &TrainSetup<'_>,
    frozen: &[VelocityField],
    mut field: VelocityField,
    stage: usize,
    iterations: usize,
    history: &mut Vec<LossRecord>,
) -> Result<VelocityField> {
    let plan = setup.plan;
    let grid = plan.grid()?;
    let stage_grid = grid.stage(stage);
    let mut opt = OptimizerState::new(field.num_params());

    let pool = match plan.prefix_pool {
        Some(kf) if stage > 0 => {
            let mut ps = sample_particles(
                setup.rho0,
                kf * plan.n_x,
                plan.seed,
                "prefix-pool",
                &[stage as u64],
            )?;
            for (mp, f) in frozen.iter().enumerate() {
                propagate_stage(f, &mut ps, &grid.stage(mp), plan.scheme)
                    .map_err(|e| divergence_at_stage(e, mp + 1))?;
            }
            Some(ps)
        }
        _ => None,
    };

    for it in 0..iterations {
        let started = Instant::now();
        let draw = if plan.resample { it as u64 } else { 0 };
        let batch = match &pool {
            Some(ps) => {
                let mut rng = rng::stream(plan.seed, "pool-draw", &[stage as u64, draw]);
                index::sample(&mut rng, ps.len(), plan.n_x)
                    .into_iter()
                    .map(|i| ps[i].clone())
                    .collect()
            }
            None => {
                let mut ps = sample_particles(
                    setup.rho0,
                    plan.n_x,
                    plan.seed,
                    "sampling",
                    &[stage as u64, draw],
                )?;
                for (mp, f) in frozen.iter().enumerate() {
                    propagate_stage(f, &mut ps, &grid.stage(mp), plan.scheme)
                        .map_err(|e| divergence_at_stage(e, mp + 1))?;
                }
                ps
            }
        };
        let (loss, grad) = stage_loss_gradient(&field, setup.spec, &batch, &stage_grid, plan.scheme)
            .map_err(|e| divergence_at_stage(e, stage + 1))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(DivergenceSite {
                step: plan.steps_per_stage,
                particle: None,
                stage: Some(stage + 1),
            }));
        }
        let mut params = field.params().to_vec();
        adam_step(&mut params, &grad, &mut opt, plan.lr, plan.adam)?;
        field.set_params(&params)?;
        history.push(LossRecord {
            iteration: it,
            stage: stage + 1,
            loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(field)
}

/// Algorithm-1 training on a one-stage plan: `plan.n_step` iterations.
pub fn train_single_stage(
    setup: &TrainSetup<'_>,
    field: VelocityField,
) -> Result<(VelocityField, Vec<LossRecord>)> {
    setup.plan.validate()?;
    if setup.plan.stages != 1 {
        return Err(Error::input("single-stage training needs exactly one stage"));
    }
    check_trainable(&field, setup.spec)?;
    let mut history = Vec::new();
    let field = train_stage(setup, &[], field, 0, setup.plan.n_step, &mut history)?;
    Ok((field, history))
}

/// Multi-stage training with warm starts. Stage 1 runs `n_step0`
/// iterations, every later stage `n_step` iterations starting from the
/// previous stage's parameters. `on_stage_end(stage, field)` is called
/// with the 1-based stage index after each stage.
pub fn train_multi_stage(
    setup: &TrainSetup<'_>,
    initial: VelocityField,
    mut on_stage_end: impl FnMut(usize, &VelocityField) -> Result<()>,
) -> Result<TrainResult> {
    let plan = setup.plan;
    plan.validate()?;
    check_trainable(&initial, setup.spec)?;
    if plan.stages == 1 {
        let (f, history) = train_single_stage(setup, initial)?;
        on_stage_end(1, &f)?;
        return Ok(TrainResult {
            fields: vec![f],
            history,
        });
    }
    let mut fields: Vec<VelocityField> = Vec::with_capacity(plan.stages);
    let mut history = Vec::new();
    let mut current = initial;
    for m in 0..plan.stages {
        let iters = if m == 0 { plan.n_step0 } else { plan.n_step };
        let trained = train_stage(setup, &fields, current, m, iters, &mut history)?;
        on_stage_end(m + 1, &trained)?;
        // warm start: the next stage begins from these exact parameters
        current = trained.clone();
        fields.push(trained);
    }
    Ok(TrainResult { fields, history })
}

/// Write the loss history as CSV with columns `iteration, stage, loss`.
pub fn write_loss_csv<W: std::io::Write>(out: W, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "stage", "loss"])?;
    for r in history {
        w.write_record(&[r.iteration.to_string(), r.stage.to_string(), format!("{:e}", r.loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iteration wall-clock times, `iteration, stage, wall_ms`.
pub fn write_timing_csv<W: std::io::Write>(out: W, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "stage", "wall_ms"])?;
    for r in history {
        w.write_record(&[r.iteration.to_string(), r.stage.to_string(), format!("{:.3}", r.wall_ms)])?;
    }
    w.flush()?;
    Ok(())
}
