//! Score-based normalizing flow: particles carry their density, log-density,
//! score and optionally the log-density Hessian along a velocity field,
//! advanced with forward Euler at pre-step derivatives.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::jet::JetOrder;
use crate::reference::{GaussianRef, DIVERGENCE_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFlowState {
    pub x: Vec<f64>,
    /// density value `rho(t, x_t)`
    pub density: f64,
    pub log_density: f64,
    /// `grad log rho(t, x_t)`
    pub score: Vec<f64>,
    /// `grad^2 log rho(t, x_t)`, row-major, when propagated
    pub hessian: Option<Vec<f64>>,
    pub t: f64,
}

impl ScoreFlowState {
    /// Exact density quantities of `rho0` at `x`.
    pub fn from_gaussian(rho0: &GaussianRef, x: Vec<f64>, t: f64, hessian: bool) -> Result<Self> {
        let l = rho0.log_density(&x)?;
        Ok(ScoreFlowState {
            score: rho0.score(&x)?,
            density: l.exp(),
            log_density: l,
            hessian: hessian.then(|| rho0.hessian()),
            x,
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn is_admissible(&self) -> bool {
        self.x
            .iter()
            .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD)
            && self.score.iter().all(|v| v.is_finite())
            && self.log_density.is_finite()
            && self.density.is_finite()
            && self
                .hessian
                .as_ref()
                .is_none_or(|h| h.iter().all(|v| v.is_finite()))
    }
}

/// Initial flow states for `samples` drawn from `rho0`.
pub fn initial_scores(
    rho0: &GaussianRef,
    samples: &[Vec<f64>],
    hessian: bool,
) -> Result<Vec<ScoreFlowState>> {
    samples
        .iter()
        .map(|x| ScoreFlowState::from_gaussian(rho0, x.clone(), 0.0, hessian))
        .collect()
}

/// Uniform grid of `stages` stages with `steps_per_stage` steps each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps_per_stage: usize,
    pub stages: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps_per_stage: usize, stages: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::input("time step must be positive"));
        }
        if stages == 0 {
            return Err(Error::input("at least one stage is required"));
        }
        Ok(TimeGrid {
            t0,
            dt,
            steps_per_stage,
            stages,
        })
    }

    /// Grid with `N_t = T / (N_T dt)`, which must come out integral.
    pub fn from_horizon(horizon: f64, stages: usize, dt: f64) -> Result<Self> {
        if stages == 0 || !(dt > 0.0) {
            return Err(Error::input("stages and dt must be positive"));
        }
        let n = horizon / (stages as f64 * dt);
        let steps = n.round();
        if (n - steps).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::input(format!(
                "horizon {horizon} is not a whole number of steps of {dt} per stage over {stages} stages"
            )));
        }
        TimeGrid::new(0.0, dt, steps as usize, stages)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_stage * self.stages
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.total_steps())
    }

    /// Stage (0-based) that owns step `j -> j + 1`.
    pub fn stage_of(&self, j: usize) -> usize {
        if self.steps_per_stage == 0 {
            0
        } else {
            (j / self.steps_per_stage).min(self.stages - 1)
        }
    }

    /// The sub-grid of a single stage.
    pub fn stage(&self, m: usize) -> TimeGrid {
        TimeGrid {
            t0: self.time(m * self.steps_per_stage),
            dt: self.dt,
            steps_per_stage: self.steps_per_stage,
            stages: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// every coordinate advanced with the pre-step velocity
    #[default]
    Euler,
    /// kinetic split `(x, v)`: `v` first, then `x' = x + dt v'`
    Symplectic,
}

fn advance(
    state: &ScoreFlowState,
    field: &dyn Field,
    dt: f64,
    scheme: Scheme,
    step: usize,
) -> Result<ScoreFlowState> {
    let n = state.dim();
    if field.state_dim() != n {
        return Err(Error::input(format!(
            "state has dimension {n}, field has {}",
            field.state_dim()
        )));
    }
    if scheme == Scheme::Symplectic && n % 2 != 0 {
        return Err(Error::input("symplectic scheme needs an (x, v) state of even dimension"));
    }
    let t = state.t;
    let (value, div, drift, hessian) = match &state.hessian {
        Some(h) => {
            let jet = field.jet(t, &state.x, JetOrder::Second)?;
            let drift = jet.score_drift(&state.score);
            let ch = jet.comp_hessians.as_ref().expect("second-order jet");
            let hd = jet.hess_div.as_ref().expect("second-order jet");
            let mut h2 = h.clone();
            for a in 0..n {
                for b in 0..n {
                    let mut acc = hd[a * n + b];
                    for (i, si) in state.score.iter().enumerate() {
                        acc += si * ch[(i * n + a) * n + b];
                    }
                    for k in 0..n {
                        acc += h[a * n + k] * jet.jac(k, b) + jet.jac(k, a) * h[k * n + b];
                    }
                    h2[a * n + b] -= dt * acc;
                }
            }
            symmetrize(&mut h2, n);
            (jet.value, jet.divergence, drift, Some(h2))
        }
        None => {
            let terms = field.flow_terms(t, &state.x, &state.score)?;
            (terms.value, terms.divergence, terms.score_drift, None)
        }
    };
    let mut x = state.x.clone();
    for (xi, fi) in x.iter_mut().zip(&value) {
        *xi += dt * fi;
    }
    if scheme == Scheme::Symplectic {
        let d = n / 2;
        for i in 0..d {
            x[i] += dt * dt * value[d + i];
        }
    }
    let next = ScoreFlowState {
        x,
        density: state.density - dt * div * state.density,
        log_density: state.log_density - dt * div,
        score: state
            .score
            .iter()
            .zip(&drift)
            .map(|(s, g)| s - dt * g)
            .collect(),
        hessian,
        t: t + dt,
    };
    if !next.is_admissible() {
        return Err(Error::divergence(step + 1));
    }
    Ok(next)
}

fn symmetrize(h: &mut [f64], n: usize) {
    for a in 0..n {
        for b in a + 1..n {
            let m = 0.5 * (h[a * n + b] + h[b * n + a]);
            h[a * n + b] = m;
            h[b * n + a] = m;
        }
    }
}

/// One forward-Euler step of state, density, log-density and score (and of
/// the Hessian when the state carries one), all at the pre-step point.
pub fn step_euler(state: &ScoreFlowState, field: &dyn Field, dt: f64) -> Result<ScoreFlowState> {
    advance(state, field, dt, Scheme::Euler, 0)
}

/// The Hessian part of a step on its own: `H - dt (sum_i s_i grad^2 f_i +
/// grad^2 div f + H grad f + grad f^T H)`, re-symmetrized.
pub fn step_hessian(state: &ScoreFlowState, field: &dyn Field, dt: f64) -> Result<Vec<f64>> {
    if state.hessian.is_none() {
        return Err(Error::input("state carries no Hessian"));
    }
    Ok(advance(state, field, dt, Scheme::Euler, 0)?
        .hessian
        .expect("hessian propagated"))
}

/// A step of an `(x, v)` state whose field has `dx/dt = v`.
pub fn step_uld(
    state: &ScoreFlowState,
    field: &dyn Field,
    dt: f64,
    scheme: Scheme,
) -> Result<ScoreFlowState> {
    if state.dim() % 2 != 0 {
        return Err(Error::input("ULD state must have even dimension"));
    }
    advance(state, field, dt, scheme, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutOptions {
    pub scheme: Scheme,
    /// record every k-th grid point (the last one is always recorded)
    pub record_every: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            scheme: Scheme::Euler,
            record_every: 1,
        }
    }
}

/// Recorded states: `states[k][p]` is particle `p` at grid step `steps[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<ScoreFlowState>>,
}

impl Trajectory {
    pub fn last(&self) -> &[ScoreFlowState] {
        self.states.last().map(|s| s.as_slice()).unwrap_or(&[])
    }

    pub fn at_step(&self, step: usize) -> Option<&[ScoreFlowState]> {
        self.steps
            .iter()
            .position(|&s| s == step)
            .map(|k| self.states[k].as_slice())
    }

    /// CSV with columns `particle, step, t, x_0.., l, s_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().and_then(|s| s.first()).map_or(0, |s| s.dim());
        let mut header = vec!["particle".to_string(), "step".into(), "t".into()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.push("l".into());
        header.extend((0..n).map(|i| format!("s_{i}")));
        w.write_record(&header)?;
        for (k, snap) in self.states.iter().enumerate() {
            for (p, st) in snap.iter().enumerate() {
                let mut rec = vec![p.to_string(), self.steps[k].to_string(), st.t.to_string()];
                rec.extend(st.x.iter().map(|v| v.to_string()));
                rec.push(st.log_density.to_string());
                rec.extend(st.score.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Advance every particle through all stages, using `fields[m]` on stage `m`.
pub fn rollout(
    initial: &[ScoreFlowState],
    fields: &[&dyn Field],
    grid: &TimeGrid,
    opts: RolloutOptions,
) -> Result<Trajectory> {
    if initial.is_empty() {
        return Err(Error::input("empty particle batch"));
    }
    if fields.len() != grid.stages {
        return Err(Error::input(format!(
            "{} fields for {} stages",
            fields.len(),
            grid.stages
        )));
    }
    let total = grid.total_steps();
    let stride = opts.record_every.max(1);
    let steps: Vec<usize> = (0..=total).filter(|j| j % stride == 0 || *j == total).collect();

    let paths: Vec<Vec<ScoreFlowState>> = initial
        .par_iter()
        .enumerate()
        .map(|(p, start)| {
            let mut st = start.clone();
            st.t = grid.t0;
            let mut rec = Vec::with_capacity(steps.len());
            let mut next = 0;
            for j in 0..=total {
                if steps.get(next) == Some(&j) {
                    rec.push(st.clone());
                    next += 1;
                }
                if j == total {
                    break;
                }
                let m = grid.stage_of(j);
                st = advance(&st, fields[m], grid.dt, opts.scheme, j)
                    .map_err(|e| e.at_particle(p).at_stage(m))?;
                // keep the clock on the grid rather than accumulating dt
                st.t = grid.time(j + 1);
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let mut states = vec![Vec::with_capacity(initial.len()); steps.len()];
    for path in paths {
        for (k, st) in path.into_iter().enumerate() {
            states[k].push(st);
        }
    }
    Ok(Trajectory {
        times: steps.iter().map(|&j| grid.time(j)).collect(),
        steps,
        states,
    })
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"FPSNAP01";

/// Binary snapshot of one recorded step, little-endian throughout:
///
/// ```text
/// magic    8 bytes  "FPSNAP01"
/// dim      u32
/// count    u32      number of particles
/// step     u64
/// t        f64
/// flags    u32      bit 0: Hessians present
/// then per particle:
///   x[dim] f64, density f64, log_density f64, score[dim] f64,
///   hessian[dim * dim] f64 (row-major, only with flag bit 0)
/// ```
pub fn write_snapshot<W: Write>(mut out: W, step: usize, states: &[ScoreFlowState]) -> Result<()> {
    let dim = states.first().map_or(0, |s| s.dim());
    let hess = states.first().is_some_and(|s| s.hessian.is_some());
    let t = states.first().map_or(0.0, |s| s.t);
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(states.len() as u32).to_le_bytes())?;
    out.write_all(&(step as u64).to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    out.write_all(&(hess as u32).to_le_bytes())?;
    for s in states {
        if s.dim() != dim || s.hessian.is_some() != hess {
            return Err(Error::input("snapshot particles must share a layout"));
        }
        let mut put = |v: f64| out.write_all(&v.to_le_bytes());
        s.x.iter().try_for_each(|&v| put(v))?;
        put(s.density)?;
        put(s.log_density)?;
        s.score.iter().try_for_each(|&v| put(v))?;
        if let Some(h) = &s.hessian {
            h.iter().try_for_each(|&v| put(v))?;
        }
    }
    Ok(())
}

/// Inverse of [`write_snapshot`]; returns the step index and the states.
pub fn read_snapshot<R: Read>(mut input: R) -> Result<(usize, Vec<ScoreFlowState>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut u32_ = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let dim = u32_(&mut input)? as usize;
    let count = u32_(&mut input)? as usize;
    input.read_exact(&mut b8)?;
    let step = u64::from_le_bytes(b8) as usize;
    input.read_exact(&mut b8)?;
    let t = f64::from_le_bytes(b8);
    let hess = u32_(&mut input)? & 1 == 1;
    let mut f = |r: &mut R, k: usize| -> Result<Vec<f64>> {
        (0..k)
            .map(|_| {
                r.read_exact(&mut b8)?;
                Ok(f64::from_le_bytes(b8))
            })
            .collect()
    };
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        let x = f(&mut input, dim)?;
        let dl = f(&mut input, 2)?;
        let score = f(&mut input, dim)?;
        let hessian = if hess { Some(f(&mut input, dim * dim)?) } else { None };
        states.push(ScoreFlowState {
            x,
            density: dl[0],
            log_density: dl[1],
            score,
            hessian,
            t,
        });
    }
    Ok((step, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Baseline, VelocityField};

    fn linear(a: Vec<f64>) -> VelocityField {
        let n = (a.len() as f64).sqrt() as usize;
        VelocityField::baseline_only(Baseline::affine(a, vec![0.0; n]).unwrap(), [3, 3]).unwrap()
    }

    fn state(x: Vec<f64>, s: Vec<f64>, h: Option<Vec<f64>>) -> ScoreFlowState {
        ScoreFlowState {
            x,
            density: 1.0,
            log_density: 0.0,
            score: s,
            hessian: h,
            t: 0.0,
        }
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let f = VelocityField::baseline_only(Baseline::Zero(2), [3, 3]).unwrap();
        let s0 = state(vec![0.3, 0.1], vec![1.0, -2.0], Some(vec![1.0, 0.5, 0.5, 2.0]));
        let s1 = step_euler(&s0, &f, 0.1).unwrap();
        assert_eq!(s1.x, s0.x);
        assert_eq!(s1.score, s0.score);
        assert_eq!(s1.hessian, s0.hessian);
        assert_eq!(s1.log_density, s0.log_density);
        assert!((s1.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_example() {
        let f = linear(vec![1.0]);
        let s1 = step_euler(&state(vec![1.0], vec![-1.0], None), &f, 0.01).unwrap();
        assert!((s1.x[0] - 1.01).abs() < 1e-15);
        assert!((s1.score[0] + 0.99).abs() < 1e-15);
    }

    #[test]
    fn linear_field_updates() {
        let a = vec![0.5, -1.0, 2.0, 0.25];
        let f = linear(a.clone());
        let h = vec![1.0, 0.2, 0.2, -0.5];
        let s0 = state(vec![0.3, -0.2], vec![1.0, 2.0], Some(h.clone()));
        let dt = 0.01;
        let s1 = step_euler(&s0, &f, dt).unwrap();
        let ats = [a[0] * 1.0 + a[2] * 2.0, a[1] * 1.0 + a[3] * 2.0];
        for i in 0..2 {
            assert!((s1.score[i] - (s0.score[i] - dt * ats[i])).abs() < 1e-15);
        }
        assert!((s1.log_density - (-dt * 0.75)).abs() < 1e-15);
        let h1 = step_hessian(&s0, &f, dt).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let mut ha = 0.0;
                for k in 0..2 {
                    ha += h[r * 2 + k] * a[k * 2 + c] + a[k * 2 + r] * h[k * 2 + c];
                }
                assert!((h1[r * 2 + c] - (h[r * 2 + c] - dt * ha)).abs() < 1e-15);
            }
        }
        assert!(step_hessian(&state(vec![0.0; 2], vec![0.0; 2], None), &f, dt).is_err());
    }

    #[test]
    fn uld_zero_force_example() {
        let f = VelocityField::baseline_only(
            Baseline::affine(vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0]).unwrap(),
            [3, 3],
        )
        .unwrap();
        let s0 = state(vec![0.5, 2.0], vec![0.7, -0.3], None);
        let s1 = step_uld(&s0, &f, 0.1, Scheme::Euler).unwrap();
        assert_eq!(s1.x[1], 2.0);
        assert!((s1.x[0] - 0.7).abs() < 1e-15);
        assert!((s1.score[1] - (-0.3 - 0.1 * 0.7)).abs() < 1e-15);
        let s2 = step_uld(&s0, &f, 0.1, Scheme::Symplectic).unwrap();
        assert!((s2.x[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn symplectic_harmonic_energy_is_bounded() {
        // dx = v, dv = -x
        let f = VelocityField::baseline_only(
            Baseline::affine(vec![0.0, 1.0, -1.0, 0.0], vec![0.0, 0.0]).unwrap(),
            [2, 2],
        )
        .unwrap();
        let mut s = state(vec![1.0, 0.0], vec![0.0, 0.0], None);
        let e0 = 0.5;
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            s = step_uld(&s, &f, 0.01, Scheme::Symplectic).unwrap();
            let e = 0.5 * (s.x[0] * s.x[0] + s.x[1] * s.x[1]);
            worst = worst.max((e - e0).abs() / e0);
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn divergence_is_reported_with_particle_and_step() {
        let f = linear(vec![1e9]);
        let init = vec![state(vec![0.0], vec![0.0], None), state(vec![1.0], vec![0.0], None)];
        let grid = TimeGrid::new(0.0, 0.1, 3, 1).unwrap();
        match rollout(&init, &[&f], &grid, RolloutOptions::default()) {
            Err(Error::Divergence(site)) => {
                assert_eq!(site.particle, Some(1));
                assert_eq!(site.step, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rollout_edge_cases() {
        let f = VelocityField::baseline_only(Baseline::Zero(1), [2, 2]).unwrap();
        let init = vec![state(vec![0.4], vec![1.0], None)];
        let grid = TimeGrid::new(0.0, 0.1, 0, 1).unwrap();
        let tr = rollout(&init, &[&f], &grid, RolloutOptions::default()).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.states[0], init);
        let grid = TimeGrid::new(0.0, 0.1, 5, 1).unwrap();
        let tr = rollout(&init, &[&f], &grid, RolloutOptions::default()).unwrap();
        assert!(tr.states.iter().all(|s| s[0].x == vec![0.4]));
        assert!(rollout(&init, &[&f, &f], &grid, RolloutOptions::default()).is_err());
        assert!(rollout(&[], &[&f], &grid, RolloutOptions::default()).is_err());
    }

    #[test]
    fn initial_score_examples() {
        let g = GaussianRef::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let st = initial_scores(&g, &[vec![0.0, 0.0], vec![1.0, 0.0]], true).unwrap();
        assert_eq!(st[0].score, vec![0.0, 0.0]);
        assert!((st[0].log_density + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert_eq!(st[1].score, vec![-1.0, 0.0]);
        assert!((st[0].density - st[0].log_density.exp()).abs() < 1e-12);
        let mu = vec![0.5, -1.0];
        let g = GaussianRef::isotropic(mu.clone(), 2.0).unwrap();
        let st = initial_scores(&g, &[vec![2.5, -1.0]], false).unwrap();
        assert!((st[0].score[0] + 1.0).abs() < 1e-15 && st[0].score[1] == 0.0);
    }

    #[test]
    fn time_grid_from_horizon() {
        let g = TimeGrid::from_horizon(5.0, 25, 0.01).unwrap();
        assert_eq!(g.steps_per_stage, 20);
        assert!((g.horizon() - 5.0).abs() < 1e-12);
        assert_eq!(g.stage_of(39), 1);
        assert!(TimeGrid::from_horizon(1.0, 3, 0.01).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let states = vec![
            state(vec![1.0, 2.0], vec![3.0, 4.0], Some(vec![1.0, 0.0, 0.0, 1.0])),
            state(vec![-1.0, 0.5], vec![0.1, 0.2], Some(vec![2.0, 0.1, 0.1, 3.0])),
        ];
        let mut buf = Vec::new();
        write_snapshot(&mut buf, 7, &states).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 + 8 + 4 + 2 * 8 * (2 + 2 + 2 + 4));
        let (step, back) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(step, 7);
        assert_eq!(back, states);
    }
}
