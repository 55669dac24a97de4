//! Closed-form and high-accuracy oracles: Gaussian densities, the OU and
//! quadratic-ULD Gaussian evolutions, Euler–Maruyama ensembles and
//! midpoint-rule partition functions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{check_dim, Field};
use crate::jet::{FieldJet, JetOrder};
use crate::problems::{skew_apply, ProblemSpec};
use crate::rng;

/// Components beyond this magnitude count as a blow-up.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// A multivariate normal `N(mean, cov)` with cached factorization.
#[derive(Debug, Clone)]
pub struct GaussianRef {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianRef {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d * d {
            return Err(Error::input("covariance must be d x d with d > 0"));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::input("covariance is not symmetric"));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::input("covariance is not positive definite"))?;
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(GaussianRef {
            mean: DVector::from_vec(mean),
            cov,
            chol_l,
            precision,
            log_norm,
        })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var;
        }
        GaussianRef::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Row-major covariance.
    pub fn covariance(&self) -> Vec<f64> {
        self.cov.transpose().as_slice().to_vec()
    }

    fn centered(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x)?;
        Ok(DVector::from_column_slice(x) - &self.mean)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let r = self.centered(x)?;
        Ok(self.log_norm - 0.5 * r.dot(&(&self.precision * &r)))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// `-cov^{-1} (x - mean)`
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = self.centered(x)?;
        Ok((-(&self.precision * r)).as_slice().to_vec())
    }

    /// `-cov^{-1}`, row-major.
    pub fn hessian(&self) -> Vec<f64> {
        (-self.precision.transpose()).as_slice().to_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut xi = vec![0.0; self.dim()];
        rng::fill_normal(rng, &mut xi);
        let x = &self.mean + &self.chol_l * DVector::from_vec(xi);
        x.as_slice().to_vec()
    }
}

/// `e^{-2t} delta + eps (1 - e^{-2t})`: the per-coordinate variance of the
/// OU process started from `N(0, delta I)`.
pub fn ou_covariance(t: f64, delta: f64, eps: f64) -> f64 {
    let e = (-2.0 * t).exp();
    e * delta + eps * (1.0 - e)
}

/// The exact composed velocity of the OU process with skew drift,
/// `f(t, x) = A x + eps x / Sigma(t)`, `A = -(I + c J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTrueField {
    pub dim: usize,
    pub delta: f64,
    pub eps: f64,
    pub c: f64,
}

impl OuTrueField {
    pub fn new(dim: usize, delta: f64, eps: f64, c: f64) -> Result<Self> {
        if delta <= 0.0 || eps <= 0.0 {
            return Err(Error::input("delta and eps must be positive"));
        }
        if c != 0.0 && dim % 2 != 0 {
            return Err(Error::input("skew drift needs an even dimension"));
        }
        Ok(OuTrueField {
            dim,
            delta,
            eps,
            c,
        })
    }

    pub fn density_at(&self, t: f64) -> GaussianRef {
        GaussianRef::isotropic(vec![0.0; self.dim], ou_covariance(t, self.delta, self.eps))
            .expect("positive variance")
    }
}

impl Field for OuTrueField {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        let k = self.eps / ou_covariance(t, self.delta, self.eps);
        let ax = skew_apply(self.c, x);
        Ok(ax.iter().zip(x).map(|(a, xi)| -a + k * xi).collect())
    }

    fn jet(&self, t: f64, x: &[f64], order: JetOrder) -> Result<FieldJet> {
        let d = self.dim;
        let mut jet = FieldJet::zeros(d, order);
        jet.value = self.evaluate(t, x)?;
        let k = self.eps / ou_covariance(t, self.delta, self.eps);
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let col = skew_apply(self.c, &e);
            for (r, v) in col.iter().enumerate() {
                jet.jacobian[r * d + i] = -v;
            }
            jet.jacobian[i * d + i] += k;
        }
        jet.divergence = jet.trace_jacobian();
        Ok(jet)
    }
}

/// `(Sigma_xx, Sigma_xv, Sigma_vv)` of one position–velocity pair.
pub type UldEntries = [f64; 3];

fn uld_rhs(s: UldEntries, gamma: f64, beta: f64) -> UldEntries {
    [
        2.0 * s[1],
        -s[0] - gamma * s[1] + s[2],
        -2.0 * s[1] - 2.0 * gamma * s[2] + 2.0 * gamma / beta,
    ]
}

fn rk4_step(s: UldEntries, h: f64, gamma: f64, beta: f64) -> UldEntries {
    let add = |a: UldEntries, b: UldEntries, c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    let k1 = uld_rhs(s, gamma, beta);
    let k2 = uld_rhs(add(s, k1, h / 2.0), gamma, beta);
    let k3 = uld_rhs(add(s, k2, h / 2.0), gamma, beta);
    let k4 = uld_rhs(add(s, k3, h), gamma, beta);
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Covariance of quadratic-potential underdamped Langevin on a uniform grid,
/// integrated with classic RK4.
#[derive(Debug, Clone, PartialEq)]
pub struct UldCovariance {
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub values: Vec<UldEntries>,
}

/// RK4 solution of the covariance ODE from `sigma0` over `steps` steps.
pub fn uld_covariance_rk4(
    sigma0: UldEntries,
    gamma: f64,
    beta: f64,
    dt: f64,
    steps: usize,
) -> Result<UldCovariance> {
    if gamma <= 0.0 || beta <= 0.0 || dt <= 0.0 {
        return Err(Error::input("gamma, beta and dt must be positive"));
    }
    let mut values = Vec::with_capacity(steps + 1);
    let mut s = sigma0;
    values.push(s);
    for _ in 0..steps {
        s = rk4_step(s, dt, gamma, beta);
        values.push(s);
    }
    Ok(UldCovariance {
        gamma,
        beta,
        dt,
        values,
    })
}

impl UldCovariance {
    /// Entries at time `t`; off-grid times take one partial RK4 step from
    /// the grid point below.
    pub fn at(&self, t: f64) -> UldEntries {
        let last = self.values.len() - 1;
        let pos = (t / self.dt).max(0.0);
        let j = (pos.floor() as usize).min(last);
        let rem = t - j as f64 * self.dt;
        if rem.abs() <= 1e-12 * self.dt.max(t.abs()) || (j == last && rem <= 0.0) {
            return self.values[j];
        }
        rk4_step(self.values[j], rem, self.gamma, self.beta)
    }

    /// The Gaussian over `(x_1..x_d, v_1..v_d)` with independent pairs.
    pub fn gaussian(&self, t: f64, d: usize) -> Result<GaussianRef> {
        let e = self.at(t);
        let n = 2 * d;
        let mut cov = vec![0.0; n * n];
        for i in 0..d {
            cov[i * n + i] = e[0];
            cov[i * n + d + i] = e[1];
            cov[(d + i) * n + i] = e[1];
            cov[(d + i) * n + d + i] = e[2];
        }
        GaussianRef::new(vec![0.0; n], cov)
    }
}

/// Reference composed velocity of quadratic ULD:
/// `(v, -(x + gamma v) + (gamma / beta) [Sigma(t)^{-1} z]_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UldTrueField {
    pub d: usize,
    pub cov: UldCovariance,
}

impl UldTrueField {
    /// Per pair: `(df_v/dx, df_v/dv)`.
    fn coefficients(&self, t: f64) -> (f64, f64) {
        let [a, b, c] = self.cov.at(t);
        let det = a * c - b * b;
        let k = self.cov.gamma / self.cov.beta;
        (-1.0 + k * (-b / det), -self.cov.gamma + k * (a / det))
    }
}

impl Field for UldTrueField {
    fn state_dim(&self) -> usize {
        2 * self.d
    }

    fn evaluate(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(2 * self.d, z)?;
        let (cx, cv) = self.coefficients(t);
        let (x, v) = z.split_at(self.d);
        let mut out = v.to_vec();
        out.extend(x.iter().zip(v).map(|(xi, vi)| cx * xi + cv * vi));
        Ok(out)
    }

    fn jet(&self, t: f64, z: &[f64], order: JetOrder) -> Result<FieldJet> {
        let n = 2 * self.d;
        let mut jet = FieldJet::zeros(n, order);
        jet.value = self.evaluate(t, z)?;
        let (cx, cv) = self.coefficients(t);
        for i in 0..self.d {
            jet.jacobian[i * n + self.d + i] = 1.0;
            jet.jacobian[(self.d + i) * n + i] = cx;
            jet.jacobian[(self.d + i) * n + self.d + i] = cv;
        }
        jet.divergence = jet.trace_jacobian();
        Ok(jet)
    }
}

/// Paths of an SDE sampled at recording times: `states[k][p]` is path `p`
/// at time `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub states: Vec<Vec<Vec<f64>>>,
}

impl Ensemble {
    pub fn at_step(&self, step: usize) -> Option<&[Vec<f64>]> {
        self.steps
            .iter()
            .position(|&s| s == step)
            .map(|k| self.states[k].as_slice())
    }

    pub fn last(&self) -> &[Vec<f64>] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// CSV with columns `particle, step, t, x_0..x_{n-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().and_then(|s| s.first()).map_or(0, |x| x.len());
        let mut header = vec!["particle".to_string(), "step".into(), "t".into()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (k, snap) in self.states.iter().enumerate() {
            for (p, x) in snap.iter().enumerate() {
                let mut rec = vec![p.to_string(), self.steps[k].to_string(), self.times[k].to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Euler–Maruyama: `z' = z + dt B(z) + sqrt(2 k dt) xi` with noise on the
/// diffusive coordinates only. Path `p` draws from the stream
/// `(seed, "em-paths", p)`. States are recorded every `record_every` steps
/// and at the final step.
pub fn euler_maruyama(
    spec: &ProblemSpec,
    x0: &[Vec<f64>],
    dt: f64,
    steps: usize,
    seed: u64,
    record_every: usize,
) -> Result<Ensemble> {
    if x0.is_empty() {
        return Err(Error::input("empty initial ensemble"));
    }
    if dt <= 0.0 {
        return Err(Error::input("dt must be positive"));
    }
    let layout = spec.layout();
    let stride = record_every.max(1);
    let record_steps: Vec<usize> = (0..=steps)
        .filter(|j| j % stride == 0 || *j == steps)
        .collect();
    let amp = (2.0 * layout.diffusion * dt).sqrt();

    let paths: Vec<Vec<Vec<f64>>> = x0
        .par_iter()
        .enumerate()
        .map(|(p, start)| {
            check_dim(layout.state_dim, start)?;
            let mut rng = rng::stream(seed, "em-paths", &[p as u64]);
            let mut z = start.clone();
            let mut xi = vec![0.0; layout.control_dim];
            let mut rec = Vec::with_capacity(record_steps.len());
            let mut next = 0;
            for j in 0..=steps {
                if record_steps.get(next) == Some(&j) {
                    rec.push(z.clone());
                    next += 1;
                }
                if j == steps {
                    break;
                }
                let b = spec.drift(&z)?;
                rng::fill_normal(&mut rng, &mut xi);
                for (zi, bi) in z.iter_mut().zip(&b) {
                    *zi += dt * bi;
                }
                for (k, x) in xi.iter().enumerate() {
                    z[layout.offset + k] += amp * x;
                }
                if z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
                    return Err(Error::divergence(j + 1).at_particle(p));
                }
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let mut states = vec![Vec::with_capacity(x0.len()); record_steps.len()];
    for path in paths {
        for (k, z) in path.into_iter().enumerate() {
            states[k].push(z);
        }
    }
    Ok(Ensemble {
        times: record_steps.iter().map(|&j| j as f64 * dt).collect(),
        steps: record_steps,
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannOptions {
    /// half side length of the starting box `[-L, L]^d`
    pub half_width: f64,
    /// cells per axis of the first pass
    pub resolution: usize,
    /// relative change between doublings that counts as converged
    pub tol: f64,
    /// boundary-to-peak integrand ratio above which the box is enlarged
    pub boundary_ratio: f64,
}

impl Default for RiemannOptions {
    fn default() -> Self {
        RiemannOptions {
            half_width: 4.0,
            resolution: 32,
            tol: 1e-4,
            boundary_ratio: 1e-8,
        }
    }
}

fn midpoint_sum(phi: &(dyn Fn(&[f64]) -> f64 + Sync), d: usize, l: f64, n: usize) -> (f64, f64, f64) {
    let h = 2.0 * l / n as f64;
    let total = n.pow(d as u32);
    // (sum, peak, boundary max)
    let chunk = |lo: usize, hi: usize| {
        let mut x = vec![0.0; d];
        let (mut s, mut peak, mut edge) = (0.0f64, 0.0f64, 0.0f64);
        for idx in lo..hi {
            let mut rest = idx;
            let mut on_edge = false;
            for xi in x.iter_mut() {
                let k = rest % n;
                rest /= n;
                on_edge |= k == 0 || k == n - 1;
                *xi = -l + (k as f64 + 0.5) * h;
            }
            let v = (-phi(&x)).exp();
            s += v;
            peak = peak.max(v);
            if on_edge {
                edge = edge.max(v);
            }
        }
        (s, peak, edge)
    };
    let block = 1 << 14;
    let parts: Vec<(f64, f64, f64)> = (0..total.div_ceil(block))
        .into_par_iter()
        .map(|b| chunk(b * block, ((b + 1) * block).min(total)))
        .collect();
    let (s, peak, edge) = parts
        .into_iter()
        .fold((0.0, 0.0f64, 0.0f64), |a, p| (a.0 + p.0, a.1.max(p.1), a.2.max(p.2)));
    (s * h.powi(d as i32), peak, edge)
}

/// Midpoint-rule estimate of `Z = int exp(-phi(x)) dx` over `R^d`, `d <= 3`.
///
/// The box grows by half its width until the integrand on the boundary
/// cells is below `boundary_ratio` of its peak; the resolution then doubles
/// until two successive estimates agree to `tol`.
pub fn riemann_partition(
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    d: usize,
    opts: RiemannOptions,
) -> Result<f64> {
    if d == 0 || d > 3 {
        return Err(Error::input(format!("quadrature supports 1 to 3 dimensions, got {d}")));
    }
    let max_cells: usize = 1 << 26;
    let mut l = opts.half_width;
    let mut n = opts.resolution.max(2);
    let mut prev = loop {
        let (z, peak, edge) = midpoint_sum(phi, d, l, n);
        if !(peak > 0.0) || !z.is_finite() {
            return Err(Error::Accuracy("integrand vanishes or overflows on the box".into()));
        }
        if edge <= opts.boundary_ratio * peak {
            break z;
        }
        l *= 1.5;
        if l > 1e3 {
            return Err(Error::Accuracy("integrand does not decay".into()));
        }
    };
    loop {
        n *= 2;
        if n.pow(d as u32) > max_cells {
            return Err(Error::Accuracy(format!(
                "no convergence to {} before {} cells per axis",
                opts.tol, n / 2
            )));
        }
        let (z, _, _) = midpoint_sum(phi, d, l, n);
        if ((z - prev) / z).abs() < opts.tol {
            return Ok(z);
        }
        prev = z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Potential;
    use std::f64::consts::PI;

    #[test]
    fn ou_covariance_examples() {
        assert_eq!(ou_covariance(0.0, 1.3, 0.5), 1.3);
        assert!((ou_covariance(20.0, 1.0, 0.5) - 0.5).abs() < 1e-12);
        assert!((ou_covariance(1.0, 1.0, 0.5) - 0.567668).abs() < 1e-6);
    }

    #[test]
    fn ou_covariance_solves_its_ode() {
        let h = 1e-5;
        for t in [0.1, 0.5, 2.0] {
            let fd = (ou_covariance(t + h, 1.0, 0.5) - ou_covariance(t - h, 1.0, 0.5)) / (2.0 * h);
            assert!((fd - (-2.0 * ou_covariance(t, 1.0, 0.5) + 2.0 * 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn ou_true_field_examples() {
        let f = OuTrueField::new(2, 1.0, 0.5, 0.0).unwrap();
        assert_eq!(f.evaluate(0.0, &[1.0, 0.0]).unwrap(), vec![-0.5, 0.0]);
        assert_eq!(f.evaluate(0.4, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let g = OuTrueField::new(2, 0.5, 0.5, 0.5).unwrap();
        // A x + x
        let x = [0.3, -0.7];
        let v0 = g.evaluate(0.0, &x).unwrap();
        let v1 = g.evaluate(1.7, &x).unwrap();
        let ax = skew_apply(0.5, &x);
        for i in 0..2 {
            assert!((v0[i] - v1[i]).abs() < 1e-15);
            assert!((v0[i] - (-ax[i] + x[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_examples() {
        let g = GaussianRef::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(g.score(&[0.5, -1.0]).unwrap(), vec![-0.5, 1.0]);
        let g2 = GaussianRef::isotropic(vec![0.0, 0.0], 2.0).unwrap();
        assert!((g2.log_density(&[0.0, 0.0]).unwrap() + (4.0 * PI).ln()).abs() < 1e-14);
        let g3 = GaussianRef::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(g3.hessian(), vec![-1.0, 0.0, 0.0, -0.25]);
        assert!(GaussianRef::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(GaussianRef::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn uld_covariance_fixed_point_and_decay() {
        let cov = uld_covariance_rk4([1.0, 0.0, 1.0], 1.0, 1.0, 0.01, 500).unwrap();
        for v in &cov.values {
            assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14 && (v[2] - 1.0).abs() < 1e-14);
        }
        let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.01, 2000).unwrap();
        assert!(cov.at(20.0)[1].abs() < 1e-6);
    }

    fn uld_exact(s0: UldEntries, gamma: f64, beta: f64, t: f64) -> UldEntries {
        // augmented linear system [s; 1] with forcing in the last column
        let mut m = DMatrix::<f64>::zeros(4, 4);
        let rows = [[0.0, 2.0, 0.0], [-1.0, -gamma, 1.0], [0.0, -2.0, -2.0 * gamma]];
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = rows[i][j] * t;
            }
        }
        m[(2, 3)] = 2.0 * gamma / beta * t;
        let e = m.exp();
        let v = e * DVector::from_vec(vec![s0[0], s0[1], s0[2], 1.0]);
        [v[0], v[1], v[2]]
    }

    #[test]
    fn rk4_matches_matrix_exponential_with_fourth_order() {
        let s0 = [2.0, 0.0, 2.0];
        let exact = uld_exact(s0, 1.0, 1.0, 1.0);
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let c = uld_covariance_rk4(s0, 1.0, 1.0, dt, steps).unwrap();
            let v = c.values[steps];
            (0..3).map(|i| (v[i] - exact[i]).abs()).fold(0.0f64, f64::max)
        };
        assert!(err(0.01) < 1e-8);
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn off_grid_covariance_interpolates_with_rk4() {
        let s0 = [2.0, 0.3, 1.5];
        let c = uld_covariance_rk4(s0, 0.7, 1.3, 0.01, 200).unwrap();
        let exact = uld_exact(s0, 0.7, 1.3, 0.12345);
        let v = c.at(0.12345);
        for i in 0..3 {
            assert!((v[i] - exact[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn uld_true_field_matches_formula() {
        let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.01, 100).unwrap();
        let f = UldTrueField { d: 1, cov: cov.clone() };
        let g = cov.gaussian(0.5, 1).unwrap();
        let z = [0.4, -0.9];
        let s = g.score(&z).unwrap();
        let out = f.evaluate(0.5, &z).unwrap();
        assert!((out[0] - z[1]).abs() < 1e-15);
        assert!((out[1] - (-(z[0] + z[1]) - s[1])).abs() < 1e-12);
    }

    #[test]
    fn em_without_noise_is_forward_euler() {
        let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.0, 0.5).unwrap();
        let ens = euler_maruyama(&spec, &[vec![1.0, 0.0]], 0.1, 1, 3, 1).unwrap();
        let b = spec.drift(&[1.0, 0.0]).unwrap();
        assert_eq!(ens.last()[0], vec![1.0 + 0.1 * b[0], 0.1 * b[1]]);
    }

    #[test]
    fn em_is_seed_deterministic_and_noise_only_on_velocity() {
        let spec = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0).unwrap();
        let x0 = vec![vec![0.5, 0.5]; 4];
        let a = euler_maruyama(&spec, &x0, 0.01, 1, 9, 1).unwrap();
        let b = euler_maruyama(&spec, &x0, 0.01, 1, 9, 1).unwrap();
        assert_eq!(a, b);
        for z in a.last() {
            assert!((z[0] - (0.5 + 0.01 * 0.5)).abs() < 1e-15);
        }
        assert!(euler_maruyama(&spec, &[], 0.01, 1, 9, 1).is_err());
    }

    #[test]
    fn riemann_examples() {
        let q = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / (2.0 * 0.5);
        let z = riemann_partition(&q, 2, RiemannOptions::default()).unwrap();
        assert!((z / PI - 1.0).abs() < 1e-4);
        let dw = ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5).unwrap();
        let phi = |x: &[f64]| dw.stationary_potential(x).unwrap();
        let z = riemann_partition(&phi, 2, RiemannOptions::default()).unwrap();
        assert!((z / 1.83388 - 1.0).abs() < 5e-4, "{z}");
        let uld = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0).unwrap();
        let phi = |z: &[f64]| uld.stationary_potential(z).unwrap();
        let z = riemann_partition(&phi, 2, RiemannOptions::default()).unwrap();
        assert!((z / (2.0 * PI) - 1.0).abs() < 1e-4);
        assert!(riemann_partition(&q, 4, RiemannOptions::default()).is_err());
    }

    #[test]
    fn riemann_extends_a_too_small_box() {
        let wide = |x: &[f64]| x[0] * x[0] / (2.0 * 9.0);
        let opts = RiemannOptions {
            half_width: 2.0,
            ..Default::default()
        };
        let z = riemann_partition(&wide, 1, opts).unwrap();
        assert!((z / (2.0 * PI * 9.0).sqrt() - 1.0).abs() < 1e-4);
    }
}
