//! Diagnostics on particle ensembles: free energy and its dissipation,
//! partition-function estimates, trajectory error metrics against closed
//! forms, and the energy distance between ensembles.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::{ScoreFlowState, TimeGrid, Trajectory};
use crate::problems::{Potential, ProblemSpec, System};
use crate::reference::GaussianRef;
use crate::rng;

/// Monte-Carlo free energy `(1/N) sum (l + Phi(z))`, where `Phi` is the
/// stationary potential (`V / eps` for Langevin, `beta H` for underdamped).
pub fn free_energy(states: &[ScoreFlowState], spec: &ProblemSpec) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::input("empty ensemble"));
    }
    let mut acc = 0.0;
    for st in states {
        if !st.log_density.is_finite() {
            return Err(Error::input("particle carries no log-density"));
        }
        acc += st.log_density + spec.stationary_potential(&st.x)?;
    }
    Ok(acc / states.len() as f64)
}

/// Monte-Carlo dissipation `-(k/N) sum |s - grad log pi|^2` over the
/// noise-driven coordinates (all of them for Langevin, `v` for ULD).
pub fn dissipation(states: &[ScoreFlowState], spec: &ProblemSpec) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::input("empty ensemble"));
    }
    let layout = spec.layout();
    let (off, m) = (layout.offset, layout.control_dim);
    let mut acc = 0.0;
    for st in states {
        let g = spec.stationary_log_density_grad(&st.x)?;
        for i in off..off + m {
            let r = st.score[i] - g[i];
            acc += r * r;
        }
    }
    Ok(-layout.diffusion * acc / states.len() as f64)
}

/// `Z ~ exp(-D(rho_T))`; only meaningful once `rho_T` is close to
/// stationary.
pub fn estimate_z(terminal_free_energy: f64) -> f64 {
    (-terminal_free_energy).exp()
}

/// `KL(a || b)` between two Gaussians.
pub fn gaussian_kl(a: &GaussianRef, b: &GaussianRef) -> Result<f64> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::input("Gaussians of different dimension"));
    }
    let sa = DMatrix::from_row_slice(n, n, &a.covariance());
    let sb = DMatrix::from_row_slice(n, n, &b.covariance());
    let cb = sb.clone().cholesky().ok_or_else(|| Error::input("singular covariance"))?;
    let ca = sa.clone().cholesky().ok_or_else(|| Error::input("singular covariance"))?;
    let dm = DVector::from_column_slice(b.mean()) - DVector::from_column_slice(a.mean());
    let tr = cb.solve(&sa).trace();
    let quad = dm.dot(&cb.solve(&dm));
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    };
    Ok(0.5 * (tr + quad - n as f64 + logdet(&cb) - logdet(&ca)))
}

/// Stationary density as a Gaussian, for the quadratic Langevin and
/// underdamped problems (the antisymmetric part leaves it unchanged).
pub fn stationary_gaussian(spec: &ProblemSpec) -> Result<GaussianRef> {
    let n = spec.state_dim();
    let var = match &spec.system {
        System::Langevin {
            potential: Potential::Quadratic,
            eps,
            ..
        } if *eps > 0.0 => *eps,
        System::Uld {
            potential: Potential::Quadratic,
            beta,
            ..
        } => 1.0 / beta,
        _ => return Err(Error::Unsupported("stationary density is not Gaussian".into())),
    };
    GaussianRef::isotropic(vec![0.0; n], var)
}

/// Exact free energy and dissipation of a Gaussian density for the
/// quadratic problems.
pub fn gaussian_energy(rho: &GaussianRef, spec: &ProblemSpec) -> Result<(f64, f64)> {
    let pi = stationary_gaussian(spec)?;
    let n = rho.dim();
    if n != spec.state_dim() {
        return Err(Error::input("density dimension does not match the problem"));
    }
    // D = KL(rho || pi) - log Z, with Z the normaliser of exp(-Phi)
    let var = pi.covariance()[0];
    let log_z = 0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln();
    let d = gaussian_kl(rho, &pi)? - log_z;

    let s = DMatrix::from_row_slice(n, n, &rho.covariance());
    let sinv = s.clone().try_inverse().ok_or_else(|| Error::input("singular covariance"))?;
    let mean = DVector::from_column_slice(rho.mean());
    // residual grad log rho - grad log pi = M x + S^-1 mu, M = A - S^-1
    let m = DMatrix::identity(n, n) / var - &sinv;
    let c = &m * &mean + &sinv * &mean;
    let cov = &m * &s * m.transpose();
    let layout = spec.layout();
    let mut acc = 0.0;
    for i in layout.offset..layout.offset + layout.control_dim {
        acc += cov[(i, i)] + c[i] * c[i];
    }
    Ok((d, -layout.diffusion * acc))
}

/// Free energy and dissipation at every recorded snapshot of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub free_energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub reference: Option<(Vec<f64>, Vec<f64>)>,
}

impl EnergyTrace {
    pub fn from_trajectory(traj: &Trajectory, spec: &ProblemSpec) -> Result<Self> {
        let mut fe = Vec::with_capacity(traj.states.len());
        let mut di = Vec::with_capacity(traj.states.len());
        for snap in &traj.states {
            fe.push(free_energy(snap, spec)?);
            di.push(dissipation(snap, spec)?);
        }
        Ok(EnergyTrace {
            times: traj.times.clone(),
            free_energy: fe,
            dissipation: di,
            reference: None,
        })
    }

    /// Attach exact values from a Gaussian reference density `rho(t)`.
    pub fn with_reference(
        mut self,
        spec: &ProblemSpec,
        rho: impl Fn(f64) -> Result<GaussianRef>,
    ) -> Result<Self> {
        let mut fe = Vec::with_capacity(self.times.len());
        let mut di = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let (d, dd) = gaussian_energy(&rho(t)?, spec)?;
            fe.push(d);
            di.push(dd);
        }
        self.reference = Some((fe, di));
        Ok(self)
    }

    /// Largest increase of the free energy between consecutive snapshots.
    pub fn max_increase(&self) -> f64 {
        self.free_energy
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Central-difference time derivative of the free energy at interior
    /// snapshots, paired with the snapshot index.
    pub fn numerical_derivative(&self) -> Vec<(usize, f64)> {
        (1..self.times.len().saturating_sub(1))
            .map(|k| {
                let dt = self.times[k + 1] - self.times[k - 1];
                (k, (self.free_energy[k + 1] - self.free_energy[k - 1]) / dt)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "free_energy", "dissipation", "ref_free_energy", "ref_dissipation"])?;
        for k in 0..self.times.len() {
            let (rf, rd) = match &self.reference {
                Some((f, d)) => (format!("{:e}", f[k]), format!("{:e}", d[k])),
                None => (String::new(), String::new()),
            };
            w.write_record(&[
                format!("{}", self.times[k]),
                format!("{:e}", self.free_energy[k]),
                format!("{:e}", self.dissipation[k]),
                rf,
                rd,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub err_f: f64,
    pub err_rho: f64,
    pub err_s: f64,
}

/// Trajectory-averaged errors against a closed-form solution: the field
/// error over all recorded snapshots (from `t_0`), density and score errors
/// over the snapshots after the first, where they vanish by construction.
///
/// `fields[m]` is the stage-`m` field, `reference` the exact composed field
/// and `density(t)` the exact Gaussian density.
pub fn error_metrics(
    fields: &[&dyn Field],
    grid: &TimeGrid,
    reference: &dyn Field,
    density: impl Fn(f64) -> Result<GaussianRef> + Sync,
    traj: &Trajectory,
) -> Result<ErrorMetrics> {
    if traj.states.len() < 2 || traj.states[0].is_empty() {
        return Err(Error::input("trajectory needs at least two snapshots"));
    }
    if fields.len() != grid.stages {
        return Err(Error::input("one field per stage is required"));
    }
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let per_snapshot: Vec<(f64, f64, f64)> = traj
        .states
        .par_iter()
        .enumerate()
        .map(|(k, snap)| {
            let j = traj.steps[k];
            let t = traj.times[k];
            let field = fields[grid.stage_of(j)];
            let rho = density(t)?;
            let (mut ef, mut er, mut es) = (0.0, 0.0, 0.0);
            for st in snap {
                ef += norm(&field.evaluate(t, &st.x)?, &reference.evaluate(t, &st.x)?);
                er += (st.density - rho.density(&st.x)?).abs();
                es += norm(&st.score, &rho.score(&st.x)?);
            }
            Ok((ef, er, es))
        })
        .collect::<Result<_>>()?;
    let np = traj.states[0].len() as f64;
    let n = per_snapshot.len() as f64;
    let err_f = per_snapshot.iter().map(|e| e.0).sum::<f64>() / (np * n);
    let err_rho = per_snapshot[1..].iter().map(|e| e.1).sum::<f64>() / (np * (n - 1.0));
    let err_s = per_snapshot[1..].iter().map(|e| e.2).sum::<f64>() / (np * (n - 1.0));
    Ok(ErrorMetrics {
        err_f,
        err_rho,
        err_s,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pair_distance(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let total: f64 = a
        .par_iter()
        .map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / (a.len() * b.len()) as f64
}

fn check_ensembles(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("empty ensemble"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(Error::input("ensembles of different dimension"));
    }
    Ok(())
}

fn energy_distance_refs(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b)
}

/// Energy distance `2 E|a - b| - E|a - a'| - E|b - b'|` with all pairs
/// (V-statistic), so identical ensembles give exactly zero.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_ensembles(a, b)?;
    let ra: Vec<&[f64]> = a.iter().map(|x| x.as_slice()).collect();
    let rb: Vec<&[f64]> = b.iter().map(|x| x.as_slice()).collect();
    Ok(energy_distance_refs(&ra, &rb))
}

/// Quantile of the energy distance under random relabelling of the pooled
/// ensembles: the null distribution for "same law".
pub fn permutation_threshold(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    check_ensembles(a, b)?;
    if permutations == 0 || !(0.0..=1.0).contains(&quantile) {
        return Err(Error::input("need permutations > 0 and a quantile in [0, 1]"));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|x| x.as_slice()).collect();
    let mut stats: Vec<f64> = (0..permutations)
        .map(|k| {
            let mut idx: Vec<usize> = (0..pooled.len()).collect();
            idx.shuffle(&mut rng::stream(seed, "permutation", &[k as u64]));
            let pa: Vec<&[f64]> = idx[..a.len()].iter().map(|&i| pooled[i]).collect();
            let pb: Vec<&[f64]> = idx[a.len()..].iter().map(|&i| pooled[i]).collect();
            energy_distance_refs(&pa, &pb)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let pos = ((permutations - 1) as f64 * quantile).ceil() as usize;
    Ok(stats[pos.min(permutations - 1)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: Vec<f64>, l: f64, s: Vec<f64>) -> ScoreFlowState {
        ScoreFlowState {
            x,
            density: l.exp(),
            log_density: l,
            score: s,
            hessian: None,
            t: 0.0,
        }
    }

    #[test]
    fn free_energy_examples() {
        let spec = ProblemSpec::langevin(1, Potential::Quadratic, 0.5, 0.0).unwrap();
        // V(x)/eps = x^2 = 1
        let st = [state(vec![1.0], 0.0, vec![0.0])];
        assert_eq!(free_energy(&st, &spec).unwrap(), 1.0);
        assert!(free_energy(&[], &spec).is_err());
        let bad = [state(vec![1.0], f64::NAN, vec![0.0])];
        assert!(matches!(free_energy(&bad, &spec), Err(Error::Input(_))));
    }

    #[test]
    fn stationary_samples_give_minus_log_z() {
        let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
        let pi = stationary_gaussian(&spec).unwrap();
        let mut r = rng::stream(1, "t", &[]);
        let sts: Vec<ScoreFlowState> = (0..20000)
            .map(|_| {
                let x = pi.sample(&mut r);
                ScoreFlowState::from_gaussian(&pi, x, 0.0, false).unwrap()
            })
            .collect();
        let d = free_energy(&sts, &spec).unwrap();
        assert!((d + std::f64::consts::PI.ln()).abs() < 0.02, "{d}");
        assert!((estimate_z(-std::f64::consts::PI.ln()) - std::f64::consts::PI).abs() < 1e-12);
        assert!(dissipation(&sts, &spec).unwrap().abs() < 1e-12);
        let (d_exact, dd) = gaussian_energy(&pi, &spec).unwrap();
        assert!((d_exact + std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!(dd.abs() < 1e-12);
    }

    #[test]
    fn dissipation_examples() {
        let spec = ProblemSpec::langevin(1, Potential::Quadratic, 0.5, 0.0).unwrap();
        // grad log pi(0) = 0, so |s - 0|^2 = 4
        let st = [state(vec![0.0], 0.0, vec![2.0])];
        assert_eq!(dissipation(&st, &spec).unwrap(), -2.0);
        let lorenz = ProblemSpec::lorenz(0.1, 0.2).unwrap();
        let st = [state(vec![0.0; 3], 0.0, vec![0.0; 3])];
        assert!(dissipation(&st, &lorenz).is_err());
    }

    #[test]
    fn uld_dissipation_uses_velocity_scores() {
        let spec = ProblemSpec::uld(1, Potential::Quadratic, 2.0, 1.0).unwrap();
        // grad_v log pi = -beta v = 0 at v = 0; the x score is ignored
        let st = [state(vec![0.0, 0.0], 0.0, vec![5.0, 1.0])];
        assert_eq!(dissipation(&st, &spec).unwrap(), -2.0);
    }

    #[test]
    fn kl_identity_on_gaussians() {
        let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.0).unwrap();
        let rho = GaussianRef::new(vec![0.3, -0.2], vec![1.0, 0.2, 0.2, 0.7]).unwrap();
        let pi = stationary_gaussian(&spec).unwrap();
        let kl = gaussian_kl(&rho, &pi).unwrap();
        let mut r = rng::stream(2, "t", &[]);
        let n = 10000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x = rho.sample(&mut r);
                rho.log_density(&x).unwrap() + spec.stationary_potential(&x).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let log_z = std::f64::consts::PI.ln();
        assert!((mean + log_z - kl).abs() < 3.0 * se, "{} vs {kl}", mean + log_z);
        assert!(gaussian_kl(&rho, &rho).unwrap().abs() < 1e-12);
    }

    #[test]
    fn energy_distance_examples() {
        let mut r = rng::stream(3, "t", &[]);
        let mut draw = |shift: f64| -> Vec<Vec<f64>> {
            (0..300)
                .map(|_| {
                    let mut x = vec![0.0; 2];
                    rng::fill_normal(&mut r, &mut x);
                    x[0] += shift;
                    x
                })
                .collect()
        };
        let a = draw(0.0);
        let b = draw(0.0);
        let c = draw(3.0);
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        let thr = permutation_threshold(&a, &b, 99, 0.99, 7).unwrap();
        assert!(energy_distance(&a, &b).unwrap() <= thr);
        assert!(energy_distance(&a, &c).unwrap() > thr);
        assert!(energy_distance(&a, &[]).is_err());
    }
}
