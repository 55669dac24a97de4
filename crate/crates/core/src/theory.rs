//! One-step linear flow matching for the OU process.
//!
//! With `x ~ N(mu0, Sigma0)`, linear drift `b(x) = B1 x + b0` and a linear
//! model `f(x) = Theta1 x + theta0`, the flow-matching loss
//!
//! ```text
//! L(theta) = E |Theta1 x + theta0 - (B1 x + b0) - g Sigma0^-1 (x - mu0)|^2
//! ```
//!
//! is a strongly convex quadratic whose minimizer
//! `(b0 - g Sigma0^-1 mu0, B1 + g Sigma0^-1)` is also the minimizer of every
//! empirical version. Gradient descent on the empirical loss contracts at
//! least like `(1 - 2 eta lambda0)` per step.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::reference::GaussianRef;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepProblem {
    pub b1: DMatrix<f64>,
    pub b0: DVector<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub gamma: f64,
    sigma0_inv: DMatrix<f64>,
}

/// Linear model parameters `(theta0, Theta1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub theta0: DVector<f64>,
    pub theta1: DMatrix<f64>,
}

impl LinearParams {
    pub fn zeros(d: usize) -> Self {
        LinearParams {
            theta0: DVector::zeros(d),
            theta1: DMatrix::zeros(d, d),
        }
    }

    /// Frobenius distance over both blocks.
    pub fn distance(&self, other: &LinearParams) -> f64 {
        ((&self.theta0 - &other.theta0).norm_squared()
            + (&self.theta1 - &other.theta1).norm_squared())
        .sqrt()
    }
}

/// First two empirical moments of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    /// `(1/N) sum x x^T`
    pub second: DMatrix<f64>,
}

impl Moments {
    pub fn of(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().ok_or_else(|| Error::input("no samples"))?.len();
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for x in samples {
            if x.len() != d {
                return Err(Error::input("samples of different dimension"));
            }
            let v = DVector::from_column_slice(x);
            mean += &v;
            second += &v * v.transpose();
        }
        let n = samples.len() as f64;
        Ok(Moments {
            mean: mean / n,
            second: second / n,
        })
    }
}

impl OneStepProblem {
    pub fn new(
        b1: DMatrix<f64>,
        b0: DVector<f64>,
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let d = mu0.len();
        if b1.shape() != (d, d) || b0.len() != d || sigma0.shape() != (d, d) {
            return Err(Error::input("one-step problem shapes do not match"));
        }
        if (&sigma0 - sigma0.transpose()).amax() > 1e-12 * sigma0.amax().max(1.0) {
            return Err(Error::input("Sigma0 is not symmetric"));
        }
        let sigma0_inv = sigma0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::input("Sigma0 is not positive definite"))?
            .inverse();
        Ok(OneStepProblem {
            b1,
            b0,
            mu0,
            sigma0,
            gamma,
            sigma0_inv,
        })
    }

    /// Random instance: Gaussian `B1, b0, mu0`, `Sigma0 = A A^T / d + I/2`,
    /// `gamma` uniform in `[0.1, 1]`.
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "theory-problem", &[d as u64]);
        let mut normal = |n: usize| {
            let mut v = vec![0.0; n];
            rng::fill_normal(&mut r, &mut v);
            v
        };
        let b1 = DMatrix::from_vec(d, d, normal(d * d)) * 0.5;
        let b0 = DVector::from_vec(normal(d));
        let mu0 = DVector::from_vec(normal(d)) * 0.5;
        let a = DMatrix::from_vec(d, d, normal(d * d));
        let sigma0 = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        let sigma0 = (&sigma0 + sigma0.transpose()) * 0.5;
        let gamma = rng::stream(seed, "theory-gamma", &[d as u64]).random_range(0.1..1.0);
        OneStepProblem::new(b1, b0, mu0, sigma0, gamma)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// Smallest eigenvalue of `Sigma0`.
    pub fn sigma0_min(&self) -> f64 {
        SymmetricEigen::new(self.sigma0.clone()).eigenvalues.min()
    }

    pub fn sigma0_norm(&self) -> f64 {
        SymmetricEigen::new(self.sigma0.clone()).eigenvalues.max()
    }

    pub fn lambda0(&self) -> f64 {
        lambda0(self.sigma0_min(), self.mu0.norm_squared())
    }

    /// Step-size bound `(4/3) / (8 (1 + |mu0|^2) + 4 ||Sigma0||_2 + lambda0)`.
    pub fn max_step_size(&self) -> f64 {
        (4.0 / 3.0)
            / (8.0 * (1.0 + self.mu0.norm_squared()) + 4.0 * self.sigma0_norm() + self.lambda0())
    }

    /// Residual map `x -> R x + r` of given parameters.
    fn residual(&self, p: &LinearParams) -> (DMatrix<f64>, DVector<f64>) {
        let rm = &p.theta1 - &self.b1 - &self.sigma0_inv * self.gamma;
        let rv = &p.theta0 - &self.b0 + &self.sigma0_inv * &self.mu0 * self.gamma;
        (rm, rv)
    }

    pub fn optimal_params(&self) -> LinearParams {
        LinearParams {
            theta0: &self.b0 - &self.sigma0_inv * &self.mu0 * self.gamma,
            theta1: &self.b1 + &self.sigma0_inv * self.gamma,
        }
    }

    /// Closed form `tr(R Sigma0 R^T) + |R mu0 + r|^2`.
    pub fn population_loss(&self, p: &LinearParams) -> f64 {
        let (rm, rv) = self.residual(p);
        (&rm * &self.sigma0 * rm.transpose()).trace() + (&rm * &self.mu0 + rv).norm_squared()
    }

    /// Finite-sample loss, summed directly.
    pub fn empirical_loss(&self, p: &LinearParams, samples: &[Vec<f64>]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::input("no samples"));
        }
        let (rm, rv) = self.residual(p);
        let mut acc = 0.0;
        for x in samples {
            let x = DVector::from_column_slice(x);
            acc += (&rm * x + &rv).norm_squared();
        }
        Ok(acc / samples.len() as f64)
    }

    /// Same loss from the sample moments: `tr(R D R^T) + 2 r^T R m + |r|^2`.
    pub fn empirical_loss_moments(&self, p: &LinearParams, m: &Moments) -> f64 {
        let (rm, rv) = self.residual(p);
        (&rm * &m.second * rm.transpose()).trace()
            + 2.0 * rv.dot(&(&rm * &m.mean))
            + rv.norm_squared()
    }

    /// Gradient of the empirical loss.
    pub fn empirical_gradient(&self, p: &LinearParams, m: &Moments) -> LinearParams {
        let (rm, rv) = self.residual(p);
        LinearParams {
            theta0: (&rm * &m.mean + &rv) * 2.0,
            theta1: (&rm * &m.second + &rv * m.mean.transpose()) * 2.0,
        }
    }

    /// The `(d+1) x (d+1)` Hessian block shared by every output row,
    /// `2 [[1, mu^T], [mu, Sigma0 + mu mu^T]]`.
    pub fn population_hessian(&self) -> HessianBlock {
        let second = &self.sigma0 + &self.mu0 * self.mu0.transpose();
        HessianBlock::from_moments(&self.mu0, &second)
    }

    /// Empirical analogue with the sample mean and second moment.
    pub fn empirical_hessian(&self, m: &Moments) -> HessianBlock {
        HessianBlock::from_moments(&m.mean, &m.second)
    }

    pub fn samples(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let g = GaussianRef::new(
            self.mu0.iter().copied().collect(),
            self.sigma0.transpose().iter().copied().collect(),
        )?;
        let mut r = rng::stream(seed, "theory-samples", &[]);
        Ok((0..n).map(|_| g.sample(&mut r)).collect())
    }
}

/// `lambda0 = (1 + s + m - sqrt((1 + s + m)^2 - 4 s)) / 2` with `s` the
/// smallest eigenvalue of `Sigma0` and `m = |mu0|^2`.
pub fn lambda0(sigma_min: f64, mu_sq: f64) -> f64 {
    let a = 1.0 + sigma_min + mu_sq;
    let disc = (a * a - 4.0 * sigma_min).max(0.0).sqrt();
    // the smaller root, written to avoid cancellation
    2.0 * sigma_min / (a + disc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlock {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub norm: f64,
}

impl HessianBlock {
    fn from_moments(mean: &DVector<f64>, second: &DMatrix<f64>) -> Self {
        let d = mean.len();
        let mut h = DMatrix::zeros(d + 1, d + 1);
        h[(0, 0)] = 1.0;
        for i in 0..d {
            h[(0, i + 1)] = mean[i];
            h[(i + 1, 0)] = mean[i];
            for j in 0..d {
                h[(i + 1, j + 1)] = second[(i, j)];
            }
        }
        h *= 2.0;
        let eig = SymmetricEigen::new(h.clone()).eigenvalues;
        HessianBlock {
            min_eigenvalue: eig.min(),
            norm: eig.iter().fold(0.0f64, |a, e| a.max(e.abs())),
            matrix: h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdRun {
    pub params: Vec<LinearParams>,
    pub losses: Vec<f64>,
    pub distances: Vec<f64>,
}

impl GdRun {
    pub fn last(&self) -> &LinearParams {
        self.params.last().expect("run holds the start point")
    }

    /// Least-squares slope of `log loss` against the iteration count over
    /// the steps whose loss is still above `floor`.
    pub fn fitted_rate(&self, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .losses
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > floor)
            .map(|(k, l)| (k as f64, l.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// `k, empirical_loss, distance_to_optimum`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "empirical_loss", "distance_to_optimum"])?;
        for k in 0..self.losses.len() {
            w.write_record(&[
                k.to_string(),
                format!("{:e}", self.losses[k]),
                format!("{:e}", self.distances[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plain gradient descent on the empirical loss from `start`. Fails with a
/// step-size error once the loss exceeds ten times its starting value.
pub fn gd_run(
    problem: &OneStepProblem,
    samples: &[Vec<f64>],
    start: LinearParams,
    eta: f64,
    iterations: usize,
) -> Result<GdRun> {
    let m = Moments::of(samples)?;
    let opt = problem.optimal_params();
    let mut p = start;
    let l0 = problem.empirical_loss_moments(&p, &m);
    let mut run = GdRun {
        params: vec![p.clone()],
        losses: vec![l0],
        distances: vec![p.distance(&opt)],
    };
    for k in 0..iterations {
        let g = problem.empirical_gradient(&p, &m);
        p.theta0 -= g.theta0 * eta;
        p.theta1 -= g.theta1 * eta;
        let l = problem.empirical_loss_moments(&p, &m);
        if !l.is_finite() || l > 10.0 * l0 + 1e-20 {
            return Err(Error::StepSize(format!(
                "loss grew from {l0:e} to {l:e} after {} steps with eta = {eta}",
                k + 1
            )));
        }
        run.losses.push(l);
        run.distances.push(p.distance(&opt));
        run.params.push(p.clone());
    }
    Ok(run)
}

/// Headline numbers of a gradient-descent experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySummary {
    pub lambda0: f64,
    pub eta_max: f64,
    pub eta: f64,
    pub fitted_rate: f64,
    pub bound_rate: f64,
    pub final_distance: f64,
    pub worst_contraction: f64,
}

impl TheorySummary {
    pub fn from_run(problem: &OneStepProblem, run: &GdRun, eta: f64) -> Self {
        let lambda0 = problem.lambda0();
        let worst = run
            .losses
            .windows(2)
            .filter(|w| w[0] > 1e-28)
            .map(|w| w[1] / w[0])
            .fold(0.0f64, f64::max);
        TheorySummary {
            lambda0,
            eta_max: problem.max_step_size(),
            eta,
            fitted_rate: run.fitted_rate(1e-24).unwrap_or(f64::NAN),
            bound_rate: (1.0 - 2.0 * eta * lambda0).ln(),
            final_distance: *run.distances.last().expect("nonempty"),
            worst_contraction: worst,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lambda0 = {:e}", self.lambda0)?;
        writeln!(out, "eta_max = {:e}", self.eta_max)?;
        writeln!(out, "eta = {:e}", self.eta)?;
        writeln!(out, "fitted_rate = {:e}", self.fitted_rate)?;
        writeln!(out, "bound_rate = {:e}", self.bound_rate)?;
        writeln!(out, "worst_contraction = {:e}", self.worst_contraction)?;
        writeln!(out, "final_distance = {:e}", self.final_distance)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(b1: f64, b0: f64, mu: f64, s: f64, g: f64) -> OneStepProblem {
        OneStepProblem::new(
            DMatrix::from_element(1, 1, b1),
            DVector::from_element(1, b0),
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, s),
            g,
        )
        .unwrap()
    }

    #[test]
    fn population_loss_examples() {
        let p = scalar(0.0, 0.0, 0.0, 1.0, 0.0);
        let th = LinearParams {
            theta0: DVector::zeros(1),
            theta1: DMatrix::from_element(1, 1, 1.0),
        };
        assert!((p.population_loss(&th) - 1.0).abs() < 1e-15);
        let q = OneStepProblem::random(3, 9).unwrap();
        assert!(q.population_loss(&q.optimal_params()) < 1e-24);
    }

    #[test]
    fn optimal_params_examples() {
        let p = scalar(0.7, -0.3, 0.4, 2.0, 0.0);
        let o = p.optimal_params();
        assert_eq!((o.theta0[0], o.theta1[(0, 0)]), (-0.3, 0.7));
        let p = OneStepProblem::new(
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            0.5,
        )
        .unwrap();
        let o = p.optimal_params();
        assert!(o.theta0.norm() == 0.0 && (o.theta1 - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        assert!(OneStepProblem::new(
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            0.5
        )
        .is_err());
    }

    #[test]
    fn lambda0_examples() {
        assert!((lambda0(1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((lambda0(0.25, 0.0) - 0.25).abs() < 1e-15);
        assert!((lambda0(1.0, 1.0) - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((lambda0(4.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_identity_and_growth() {
        for seed in 0..10 {
            let p = OneStepProblem::random(3, seed).unwrap();
            let opt = p.optimal_params();
            let h = p.population_hessian();
            let mut r = rng::stream(seed, "perturb", &[]);
            let mut dv = vec![0.0; 12];
            rng::fill_normal(&mut r, &mut dv);
            let mut q = opt.clone();
            for i in 0..3 {
                q.theta0[i] += dv[i];
                for j in 0..3 {
                    q.theta1[(i, j)] += dv[3 + 3 * i + j];
                }
            }
            // sum over rows of (1/2) e_i^T H e_i with e_i = (da_i, dB_i)
            let mut quad = 0.0;
            for i in 0..3 {
                let e = DVector::from_vec(vec![dv[i], dv[3 + 3 * i], dv[4 + 3 * i], dv[5 + 3 * i]]);
                quad += 0.5 * e.dot(&(&h.matrix * &e));
            }
            let l = p.population_loss(&q);
            assert!((l - quad).abs() < 1e-12 * quad.max(1.0), "{l} vs {quad}");
            let sq: f64 = dv.iter().map(|x| x * x).sum();
            assert!(l >= p.lambda0() * sq * (1.0 - 1e-12));
        }
    }

    #[test]
    fn empirical_paths_agree() {
        let p = OneStepProblem::random(2, 4).unwrap();
        let xs = p.samples(50, 1).unwrap();
        let m = Moments::of(&xs).unwrap();
        let th = LinearParams {
            theta0: DVector::from_vec(vec![0.3, -0.1]),
            theta1: DMatrix::from_vec(2, 2, vec![0.2, 0.1, -0.4, 0.5]),
        };
        let a = p.empirical_loss(&th, &xs).unwrap();
        let b = p.empirical_loss_moments(&th, &m);
        assert!((a - b).abs() < 1e-12 * a);
        assert!(p.empirical_loss(&p.optimal_params(), &xs).unwrap() < 1e-24);

        let single = vec![p.mu0.iter().copied().collect::<Vec<_>>()];
        let l = p.empirical_loss(&th, &single).unwrap();
        let direct = (&th.theta1 * &p.mu0 + &th.theta0 - &p.b1 * &p.mu0 - &p.b0).norm_squared();
        assert!((l - direct).abs() < 1e-12);

        let g = p.empirical_gradient(&th, &m);
        let h = 1e-6;
        for i in 0..2 {
            let mut q = th.clone();
            q.theta0[i] += h;
            let lp = p.empirical_loss_moments(&q, &m);
            q.theta0[i] -= 2.0 * h;
            let fd = (lp - p.empirical_loss_moments(&q, &m)) / (2.0 * h);
            assert!((fd - g.theta0[i]).abs() < 1e-8 * g.theta0[i].abs().max(1.0));
            for j in 0..2 {
                let mut q = th.clone();
                q.theta1[(i, j)] += h;
                let lp = p.empirical_loss_moments(&q, &m);
                q.theta1[(i, j)] -= 2.0 * h;
                let fd = (lp - p.empirical_loss_moments(&q, &m)) / (2.0 * h);
                assert!((fd - g.theta1[(i, j)]).abs() < 1e-8 * g.theta1[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_examples() {
        let p = OneStepProblem::new(
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            0.3,
        )
        .unwrap();
        let h = p.population_hessian();
        assert!((h.matrix.clone() - DMatrix::identity(3, 3) * 2.0).norm() < 1e-15);
        assert!((h.min_eigenvalue - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gd_from_optimum_stays_put_and_large_steps_fail() {
        let p = OneStepProblem::random(2, 2).unwrap();
        let xs = p.samples(100, 3).unwrap();
        let run = gd_run(&p, &xs, p.optimal_params(), p.max_step_size(), 20).unwrap();
        assert!(run.distances.iter().all(|d| *d < 1e-12));
        assert!(matches!(
            gd_run(&p, &xs, LinearParams::zeros(2), 10.0, 50),
            Err(Error::StepSize(_))
        ));
    }
}
