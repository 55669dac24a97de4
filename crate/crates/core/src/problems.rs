//! The dynamical systems: Langevin with a skew drift, underdamped Langevin,
//! the scaled stochastic Lorenz and arctangent-Lorenz systems, and the
//! stochastic van der Pol oscillator.
//!
//! Every system is written as `dz = B(z) dt + sqrt(2 k) dW` where the noise
//! acts on a contiguous block of "diffusive" coordinates. For the first-order
//! systems that block is the whole state; for the second-order ones
//! (underdamped Langevin, van der Pol) it is the velocity half.

use crate::error::{Error, Result};
use crate::jet::{field_jet_from_components, FieldJet, Jet3, JetOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `V(x) = |x|^2 / 2`
    Quadratic,
    /// `V(x) = |x - c1|^2 |x - c2|^2 / 4` with `c1 = (1,..,1)`, `c2 = -c1`
    DoubleWell,
}

/// Which form of the middle row of the arctangent-Lorenz drift to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtanVariant {
    /// `50 s atan(x (rho - 50 s z) - 50 s y)`, as originally published
    Verbatim,
    /// `50 s atan((x (rho - z / s) - y) / (50 s))`, the rescaled form that
    /// reduces to the scaled Lorenz row for small arguments
    Consistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Langevin,
    Uld,
    Lorenz,
    AtanLorenz,
    VanDerPol,
}

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    /// `b(x) = -(I + c J) grad V(x)`, noise `sqrt(2 eps)` on every coordinate
    Langevin {
        potential: Potential,
        eps: f64,
        c: f64,
    },
    /// `dx = v dt, dv = -(gamma v + grad U) dt + sqrt(2 gamma / beta) dW`
    Uld {
        potential: Potential,
        gamma: f64,
        beta: f64,
    },
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
        scale: f64,
        eps: f64,
    },
    AtanLorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
        scale: f64,
        eps: f64,
        variant: AtanVariant,
    },
    /// `dx = v dt, dv = mu (1 - x^2) v dt + sqrt(2 eps) dW`
    VanDerPol { mu: f64, eps: f64 },
}

/// Where the learned part of the velocity lives and how strong the noise is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLayout {
    pub state_dim: usize,
    /// first diffusive coordinate
    pub offset: usize,
    /// number of diffusive coordinates, which is also the network output size
    pub control_dim: usize,
    /// diffusion constant `k` of `sqrt(2 k) dW`
    pub diffusion: f64,
}

impl ControlLayout {
    pub fn full(state_dim: usize, diffusion: f64) -> Self {
        ControlLayout {
            state_dim,
            offset: 0,
            control_dim: state_dim,
            diffusion,
        }
    }

    /// `Some(d)` when the state splits as `(x, v)` with `dx/dt = v`.
    pub fn kinetic_split(&self) -> Option<usize> {
        (self.offset > 0 && self.offset == self.control_dim && self.state_dim == 2 * self.offset)
            .then_some(self.offset)
    }
}

/// A fully parameterized dynamical system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub system: System,
    /// state dimension: `d` for Langevin, `2d` for underdamped Langevin
    pub dim: usize,
}

pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

impl ProblemSpec {
    pub fn langevin(d: usize, potential: Potential, eps: f64, c: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("langevin dimension must be positive"));
        }
        if c != 0.0 && d % 2 != 0 {
            return Err(Error::input("skew drift needs an even dimension"));
        }
        non_negative("eps", eps)?;
        Ok(ProblemSpec {
            system: System::Langevin { potential, eps, c },
            dim: d,
        })
    }

    /// Underdamped Langevin in `d` position dimensions (state dimension `2d`).
    pub fn uld(d: usize, potential: Potential, gamma: f64, beta: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("uld dimension must be positive"));
        }
        positive("gamma", gamma)?;
        positive("beta", beta)?;
        Ok(ProblemSpec {
            system: System::Uld {
                potential,
                gamma,
                beta,
            },
            dim: 2 * d,
        })
    }

    pub fn lorenz(eps: f64, scale: f64) -> Result<Self> {
        non_negative("eps", eps)?;
        positive("s", scale)?;
        Ok(ProblemSpec {
            system: System::Lorenz {
                sigma: LORENZ_SIGMA,
                rho: LORENZ_RHO,
                beta: LORENZ_BETA,
                scale,
                eps,
            },
            dim: 3,
        })
    }

    pub fn atan_lorenz(eps: f64, scale: f64, variant: AtanVariant) -> Result<Self> {
        non_negative("eps", eps)?;
        positive("s", scale)?;
        Ok(ProblemSpec {
            system: System::AtanLorenz {
                sigma: LORENZ_SIGMA,
                rho: LORENZ_RHO,
                beta: LORENZ_BETA,
                scale,
                eps,
                variant,
            },
            dim: 3,
        })
    }

    pub fn van_der_pol(mu: f64, eps: f64) -> Result<Self> {
        non_negative("eps", eps)?;
        Ok(ProblemSpec {
            system: System::VanDerPol { mu, eps },
            dim: 2,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        match self.system {
            System::Langevin { .. } => ProblemKind::Langevin,
            System::Uld { .. } => ProblemKind::Uld,
            System::Lorenz { .. } => ProblemKind::Lorenz,
            System::AtanLorenz { .. } => ProblemKind::AtanLorenz,
            System::VanDerPol { .. } => ProblemKind::VanDerPol,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> ControlLayout {
        let n = self.dim;
        match self.system {
            System::Langevin { eps, .. } => ControlLayout::full(n, eps),
            System::Lorenz { eps, .. } | System::AtanLorenz { eps, .. } => {
                ControlLayout::full(n, eps)
            }
            System::Uld { gamma, beta, .. } => ControlLayout {
                state_dim: n,
                offset: n / 2,
                control_dim: n / 2,
                diffusion: gamma / beta,
            },
            System::VanDerPol { eps, .. } => ControlLayout {
                state_dim: 2,
                offset: 1,
                control_dim: 1,
                diffusion: eps,
            },
        }
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::input(format!(
                "state has dimension {}, problem expects {}",
                z.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Deterministic drift `B(z)` of the SDE.
    pub fn drift(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        Ok(match self.system {
            System::Langevin { potential, c, .. } => {
                let g = grad_potential(potential, z);
                let mut out = skew_apply(c, &g);
                out.iter_mut().for_each(|v| *v = -*v);
                out
            }
            System::Uld {
                potential, gamma, ..
            } => {
                let d = self.dim / 2;
                let (x, v) = z.split_at(d);
                let g = grad_potential(potential, x);
                let mut out = v.to_vec();
                out.extend(v.iter().zip(&g).map(|(vi, gi)| -(gamma * vi + gi)));
                out
            }
            System::Lorenz { .. } | System::AtanLorenz { .. } | System::VanDerPol { .. } => {
                self.drift_jet(z)?.value
            }
        })
    }

    /// Value and all spatial derivatives (through the Hessian of the
    /// divergence) of the drift.
    pub fn drift_jet(&self, z: &[f64]) -> Result<FieldJet> {
        self.check_dim(z)?;
        Ok(match self.system {
            System::Langevin { potential, c, .. } => langevin_jet(potential, c, z),
            System::Uld {
                potential, gamma, ..
            } => uld_jet(potential, gamma, z),
            System::Lorenz {
                sigma,
                rho,
                beta,
                scale,
                ..
            } => {
                let [x, y, w] = Jet3::<3>::vars(&[z[0], z[1], z[2]]);
                let f1 = (y - x) * sigma;
                let f2 = x * (w.scale(-1.0 / scale).add_const(rho)) - y;
                let f3 = (x * y).scale(1.0 / scale) - w * beta;
                field_jet_from_components(&[f1, f2, f3])
            }
            System::AtanLorenz {
                sigma,
                rho,
                beta,
                scale,
                variant,
                ..
            } => {
                let k = 50.0 * scale;
                let [x, y, w] = Jet3::<3>::vars(&[z[0], z[1], z[2]]);
                let f1 = ((y - x) * (sigma / k)).atan() * k;
                let f2 = match variant {
                    AtanVariant::Verbatim => {
                        (x * (w * (-k)).add_const(rho) - y * k).atan() * k
                    }
                    AtanVariant::Consistent => {
                        ((x * (w.scale(-1.0 / scale).add_const(rho)) - y) * (1.0 / k)).atan() * k
                    }
                };
                let f3 = (((x * y).scale(1.0 / scale) - w * beta) * (1.0 / k)).atan() * k;
                field_jet_from_components(&[f1, f2, f3])
            }
            System::VanDerPol { mu, .. } => {
                let [x, v] = Jet3::<2>::vars(&[z[0], z[1]]);
                let f2 = (x.square().scale(-1.0).add_const(1.0) * v) * mu;
                field_jet_from_components(&[v, f2])
            }
        })
    }

    /// Position-space potential `V` (Langevin) or `U` (underdamped Langevin).
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let p = self.potential_kind()?;
        self.check_position_dim(x)?;
        Ok(potential_value(p, x))
    }

    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.potential_kind()?;
        self.check_position_dim(x)?;
        Ok(grad_potential(p, x))
    }

    fn potential_kind(&self) -> Result<Potential> {
        match self.system {
            System::Langevin { potential, .. } | System::Uld { potential, .. } => Ok(potential),
            _ => Err(Error::input(format!(
                "{:?} has no potential function",
                self.kind()
            ))),
        }
    }

    fn check_position_dim(&self, x: &[f64]) -> Result<()> {
        let d = match self.system {
            System::Uld { .. } => self.dim / 2,
            _ => self.dim,
        };
        if x.len() != d {
            return Err(Error::input(format!(
                "position has dimension {}, expected {d}",
                x.len()
            )));
        }
        Ok(())
    }

    /// `H(x, v) = |v|^2 / 2 + U(x)`.
    pub fn hamiltonian(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        match self.system {
            System::Uld { potential, .. } => {
                let d = self.dim / 2;
                if x.len() != d || v.len() != d {
                    return Err(Error::input("hamiltonian arguments have the wrong dimension"));
                }
                Ok(0.5 * dot(v, v) + potential_value(potential, x))
            }
            _ => Err(Error::input("a Hamiltonian is only defined for underdamped Langevin")),
        }
    }

    /// `Phi(z)` with stationary density `pi(z) = exp(-Phi(z)) / Z`: `V / eps`
    /// for Langevin and `beta H` for underdamped Langevin.
    pub fn stationary_potential(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        match self.system {
            System::Langevin { eps, .. } if eps == 0.0 => Err(self.no_stationary()),
            System::Langevin { potential, eps, .. } => Ok(potential_value(potential, z) / eps),
            System::Uld { beta, .. } => {
                let (x, v) = z.split_at(self.dim / 2);
                Ok(beta * self.hamiltonian(x, v)?)
            }
            _ => Err(self.no_stationary()),
        }
    }

    /// `grad log pi(z)`, without normalization.
    pub fn stationary_log_density_grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        match self.system {
            System::Langevin { eps, .. } if eps == 0.0 => Err(self.no_stationary()),
            System::Langevin { potential, eps, .. } => Ok(grad_potential(potential, z)
                .into_iter()
                .map(|g| -g / eps)
                .collect()),
            System::Uld {
                potential, beta, ..
            } => {
                let (x, v) = z.split_at(self.dim / 2);
                let mut out: Vec<f64> = grad_potential(potential, x)
                    .into_iter()
                    .map(|g| -beta * g)
                    .collect();
                out.extend(v.iter().map(|vi| -beta * vi));
                Ok(out)
            }
            _ => Err(self.no_stationary()),
        }
    }

    pub fn has_stationary_density(&self) -> bool {
        match self.system {
            System::Langevin { eps, .. } => eps > 0.0,
            System::Uld { .. } => true,
            _ => false,
        }
    }

    fn no_stationary(&self) -> Error {
        Error::Unsupported(format!(
            "{:?} has no closed-form stationary density",
            self.kind()
        ))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be positive, got {v}")))
    }
}

/// Zero noise is allowed: it is the deterministic limit (no stationary
/// density).
fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("{name} must be non-negative, got {v}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(I + c J) g` with `J = [[0, I], [-I, 0]]`.
pub(crate) fn skew_apply(c: f64, g: &[f64]) -> Vec<f64> {
    let d = g.len();
    let mut out = g.to_vec();
    if c != 0.0 {
        let h = d / 2;
        for i in 0..h {
            out[i] += c * g[h + i];
            out[h + i] -= c * g[i];
        }
    }
    out
}

/// Entries of `I + c J` as a dense row-major matrix.
fn skew_matrix(c: f64, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    if c != 0.0 {
        let h = d / 2;
        for i in 0..h {
            m[i * d + h + i] = c;
            m[(h + i) * d + i] = -c;
        }
    }
    m
}

pub(crate) fn potential_value(p: Potential, x: &[f64]) -> f64 {
    match p {
        Potential::Quadratic => 0.5 * dot(x, x),
        Potential::DoubleWell => {
            let (a, b) = well_distances(x);
            0.25 * a * b
        }
    }
}

fn well_distances(x: &[f64]) -> (f64, f64) {
    let a = x.iter().map(|v| (v - 1.0).powi(2)).sum();
    let b = x.iter().map(|v| (v + 1.0).powi(2)).sum();
    (a, b)
}

pub(crate) fn grad_potential(p: Potential, x: &[f64]) -> Vec<f64> {
    match p {
        Potential::Quadratic => x.to_vec(),
        Potential::DoubleWell => {
            let (a, b) = well_distances(x);
            x.iter()
                .map(|v| 0.5 * ((v - 1.0) * b + (v + 1.0) * a))
                .collect()
        }
    }
}

fn hess_potential(p: Potential, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut h = vec![0.0; d * d];
    match p {
        Potential::Quadratic => {
            for i in 0..d {
                h[i * d + i] = 1.0;
            }
        }
        Potential::DoubleWell => {
            let (a, b) = well_distances(x);
            for i in 0..d {
                let (pi, qi) = (x[i] - 1.0, x[i] + 1.0);
                for j in 0..d {
                    let (pj, qj) = (x[j] - 1.0, x[j] + 1.0);
                    h[i * d + j] = pi * qj + qi * pj;
                }
                h[i * d + i] += 0.5 * (a + b);
            }
        }
    }
    h
}

/// Third derivatives `T[k][a][b] = d^3 V / dx_k dx_a dx_b`.
fn third_potential(p: Potential, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut t = vec![0.0; d * d * d];
    if p == Potential::DoubleWell {
        for k in 0..d {
            for a in 0..d {
                for b in 0..d {
                    let mut v = 0.0;
                    if a == b {
                        v += 2.0 * x[k];
                    }
                    if a == k {
                        v += 2.0 * x[b];
                    }
                    if b == k {
                        v += 2.0 * x[a];
                    }
                    t[(k * d + a) * d + b] = v;
                }
            }
        }
    }
    t
}

/// `(grad Laplacian V, Hessian Laplacian V)`.
fn laplacian_derivatives(p: Potential, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    match p {
        Potential::Quadratic => (vec![0.0; d], vec![0.0; d * d]),
        Potential::DoubleWell => {
            let k = 2.0 * (d as f64 + 2.0);
            let g = x.iter().map(|v| k * v).collect();
            let mut h = vec![0.0; d * d];
            for i in 0..d {
                h[i * d + i] = k;
            }
            (g, h)
        }
    }
}

fn langevin_jet(p: Potential, c: f64, x: &[f64]) -> FieldJet {
    let d = x.len();
    let m = skew_matrix(c, d);
    let grad = grad_potential(p, x);
    let hess = hess_potential(p, x);
    let third = third_potential(p, x);
    let (glap, hlap) = laplacian_derivatives(p, x);

    let mut jet = FieldJet::zeros(d, JetOrder::Second);
    for i in 0..d {
        for k in 0..d {
            let mik = m[i * d + k];
            if mik == 0.0 {
                continue;
            }
            jet.value[i] -= mik * grad[k];
            for q in 0..d {
                jet.jacobian[i * d + q] -= mik * hess[k * d + q];
            }
            let ch = jet.comp_hessians.as_mut().unwrap();
            for a in 0..d {
                for b in 0..d {
                    ch[(i * d + a) * d + b] -= mik * third[(k * d + a) * d + b];
                }
            }
        }
    }
    jet.divergence = -(0..d).map(|i| hess[i * d + i]).sum::<f64>();
    jet.grad_div = glap.into_iter().map(|v| -v).collect();
    jet.hess_div = Some(hlap.into_iter().map(|v| -v).collect());
    jet
}

fn uld_jet(p: Potential, gamma: f64, z: &[f64]) -> FieldJet {
    let n = z.len();
    let d = n / 2;
    let (x, v) = z.split_at(d);
    let grad = grad_potential(p, x);
    let hess = hess_potential(p, x);
    let third = third_potential(p, x);

    let mut jet = FieldJet::zeros(n, JetOrder::Second);
    for i in 0..d {
        jet.value[i] = v[i];
        jet.value[d + i] = -(gamma * v[i] + grad[i]);
        jet.jacobian[i * n + d + i] = 1.0;
        jet.jacobian[(d + i) * n + d + i] = -gamma;
        for q in 0..d {
            jet.jacobian[(d + i) * n + q] = -hess[i * d + q];
        }
        let ch = jet.comp_hessians.as_mut().unwrap();
        for a in 0..d {
            for b in 0..d {
                ch[((d + i) * n + a) * n + b] = -third[(i * d + a) * d + b];
            }
        }
    }
    jet.divergence = -gamma * d as f64;
    jet
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn drift_examples() {
        let l = ProblemSpec::lorenz(0.1, 0.2).unwrap();
        assert_eq!(l.drift(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);

        let q = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
        assert_eq!(q.drift(&[1.0, 0.0]).unwrap(), vec![-1.0, 0.5]);

        let vdp = ProblemSpec::van_der_pol(2.0, 0.1).unwrap();
        assert_eq!(vdp.drift(&[0.0, 1.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn potential_examples() {
        let q = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
        assert_eq!(q.potential(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(q.grad_potential(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        let dw = ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5).unwrap();
        assert_eq!(dw.potential(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dw.potential(&[0.0, 0.0]).unwrap(), 1.0);

        let lz = ProblemSpec::lorenz(0.1, 0.2).unwrap();
        assert!(matches!(lz.potential(&[0.0; 3]), Err(Error::Input(_))));
    }

    #[test]
    fn stationary_score_examples() {
        let q = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.0).unwrap();
        assert_eq!(
            q.stationary_log_density_grad(&[1.0, 0.0]).unwrap(),
            vec![-2.0, 0.0]
        );
        let u = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0).unwrap();
        assert_eq!(
            u.stationary_log_density_grad(&[0.0, 1.0]).unwrap(),
            vec![0.0, -1.0]
        );
        assert_eq!(u.stationary_log_density_grad(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let dw = ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5).unwrap();
        assert_eq!(dw.stationary_log_density_grad(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let vdp = ProblemSpec::van_der_pol(2.0, 0.1).unwrap();
        assert!(matches!(
            vdp.stationary_log_density_grad(&[0.0, 0.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn hamiltonian_examples() {
        let u = ProblemSpec::uld(2, Potential::Quadratic, 1.0, 1.0).unwrap();
        assert_eq!(u.hamiltonian(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(u.hamiltonian(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let dw = ProblemSpec::uld(2, Potential::DoubleWell, 1.0, 1.0).unwrap();
        assert_eq!(dw.hamiltonian(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        let l = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.0).unwrap();
        assert!(l.hamiltonian(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn langevin_without_skew_is_gradient_flow() {
        let dw = ProblemSpec::langevin(3, Potential::DoubleWell, 0.5, 0.0).unwrap();
        let x = [0.3, -1.2, 0.8];
        let b = dw.drift(&x).unwrap();
        let g = dw.grad_potential(&x).unwrap();
        for (bi, gi) in b.iter().zip(&g) {
            assert_eq!(*bi, -gi);
        }
    }

    // The closed-form Langevin derivatives against the Taylor-number route.
    #[test]
    fn langevin_closed_form_jet_matches_taylor_numbers() {
        let spec = ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5).unwrap();
        let z = [0.4, -0.7];
        let jet = spec.drift_jet(&z).unwrap();
        let [x, y] = Jet3::<2>::vars(&z);
        let a = (x.add_const(-1.0)).square() + (y.add_const(-1.0)).square();
        let b = (x.add_const(1.0)).square() + (y.add_const(1.0)).square();
        let gx = (x.add_const(-1.0) * b + x.add_const(1.0) * a).scale(0.5);
        let gy = (y.add_const(-1.0) * b + y.add_const(1.0) * a).scale(0.5);
        // -(I + cJ) grad V with J = [[0,1],[-1,0]]
        let f1 = -(gx + gy.scale(0.5));
        let f2 = -(gy - gx.scale(0.5));
        let reference = field_jet_from_components(&[f1, f2]);
        for (u, v) in jet.value.iter().zip(&reference.value) {
            assert!(close(*u, *v, 1e-13));
        }
        for (u, v) in jet.jacobian.iter().zip(&reference.jacobian) {
            assert!(close(*u, *v, 1e-13));
        }
        assert!(close(jet.divergence, reference.divergence, 1e-13));
        for (u, v) in jet.grad_div.iter().zip(&reference.grad_div) {
            assert!(close(*u, *v, 1e-13));
        }
        let (h1, h2) = (jet.comp_hessians.unwrap(), reference.comp_hessians.unwrap());
        for (u, v) in h1.iter().zip(&h2) {
            assert!(close(*u, *v, 1e-13));
        }
        let (h1, h2) = (jet.hess_div.unwrap(), reference.hess_div.unwrap());
        for (u, v) in h1.iter().zip(&h2) {
            assert!(close(*u, *v, 1e-13));
        }
    }

    #[test]
    fn atan_lorenz_reduces_to_lorenz_for_small_arguments() {
        let lz = ProblemSpec::lorenz(0.1, 0.1).unwrap();
        let consistent = ProblemSpec::atan_lorenz(0.1, 0.1, AtanVariant::Consistent).unwrap();
        let verbatim = ProblemSpec::atan_lorenz(0.1, 0.1, AtanVariant::Verbatim).unwrap();
        // every saturation argument below 1e-3 in magnitude
        let z = [1e-4, 1.1e-4, 2e-6];
        let a = lz.drift(&z).unwrap();
        let b = consistent.drift(&z).unwrap();
        let c = verbatim.drift(&z).unwrap();
        for i in 0..3 {
            assert!(((a[i] - b[i]) / a[i]).abs() < 1e-6, "row {i}");
        }
        // the published middle row is not a rescaling of the Lorenz row
        for i in [0, 2] {
            assert!(((a[i] - c[i]) / a[i]).abs() < 1e-6, "row {i}");
        }
    }

    #[test]
    fn uld_layout_splits_state() {
        let u = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 2.0).unwrap();
        let l = u.layout();
        assert_eq!(l.kinetic_split(), Some(1));
        assert_eq!(l.diffusion, 0.5);
        let q = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
        assert_eq!(q.layout().kinetic_split(), None);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ProblemSpec::langevin(3, Potential::Quadratic, 0.5, 0.5).is_err());
        assert!(ProblemSpec::langevin(2, Potential::Quadratic, -1.0, 0.5).is_err());
        assert!(ProblemSpec::uld(1, Potential::Quadratic, 0.0, 1.0).is_err());
        let q = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
        assert!(q.drift(&[1.0]).is_err());
    }
}
