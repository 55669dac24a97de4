//! Derivative containers.
//!
//! [`FieldJet`] holds the spatial derivatives of a vector field at one point,
//! exactly as the score-flow updates consume them. [`Jet3`] is a truncated
//! third-order Taylor number used to differentiate the hand-written drifts of
//! the low-dimensional chaotic systems.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// How many spatial derivatives a jet evaluation must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetOrder {
    /// value, Jacobian, divergence and gradient of the divergence
    First,
    /// additionally the component Hessians and the Hessian of the divergence
    Second,
}

impl JetOrder {
    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            1 => Ok(JetOrder::First),
            2 => Ok(JetOrder::Second),
            other => Err(Error::input(format!("unsupported jet order {other}"))),
        }
    }
}

/// Spatial derivatives of a field `F: R^n -> R^n` at a point.
///
/// Matrices are row-major: `jacobian[i * n + q] = dF_i / dz_q` and
/// `comp_hessians[(i * n + a) * n + b] = d^2 F_i / dz_a dz_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub value: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub divergence: f64,
    pub grad_div: Vec<f64>,
    pub comp_hessians: Option<Vec<f64>>,
    pub hess_div: Option<Vec<f64>>,
}

impl FieldJet {
    /// All-zero jet of dimension `n`, with second-order slots when requested.
    pub fn zeros(n: usize, order: JetOrder) -> Self {
        let second = order == JetOrder::Second;
        FieldJet {
            value: vec![0.0; n],
            jacobian: vec![0.0; n * n],
            divergence: 0.0,
            grad_div: vec![0.0; n],
            comp_hessians: second.then(|| vec![0.0; n * n * n]),
            hess_div: second.then(|| vec![0.0; n * n]),
        }
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn jac(&self, i: usize, q: usize) -> f64 {
        self.jacobian[i * self.dim() + q]
    }

    pub fn trace_jacobian(&self) -> f64 {
        (0..self.dim()).map(|i| self.jac(i, i)).sum()
    }

    /// `jacobian^T * s`
    pub fn jt_mul(&self, s: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let si = s[i];
            let row = &self.jacobian[i * n..(i + 1) * n];
            for (o, j) in out.iter_mut().zip(row) {
                *o += j * si;
            }
        }
        out
    }

    /// `jacobian * u`
    pub fn jac_mul(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                self.jacobian[i * n..(i + 1) * n]
                    .iter()
                    .zip(u)
                    .map(|(j, x)| j * x)
                    .sum()
            })
            .collect()
    }

    /// `jacobian^T s + grad(div F)`: the drift of the score equation.
    pub fn score_drift(&self, s: &[f64]) -> Vec<f64> {
        let mut out = self.jt_mul(s);
        for (o, g) in out.iter_mut().zip(&self.grad_div) {
            *o += g;
        }
        out
    }

    /// Add `other` into `self` entrywise. Second-order slots are summed when
    /// both sides carry them and dropped otherwise.
    pub fn accumulate(&mut self, other: &FieldJet) {
        for (a, b) in self.value.iter_mut().zip(&other.value) {
            *a += b;
        }
        for (a, b) in self.jacobian.iter_mut().zip(&other.jacobian) {
            *a += b;
        }
        self.divergence += other.divergence;
        for (a, b) in self.grad_div.iter_mut().zip(&other.grad_div) {
            *a += b;
        }
        self.comp_hessians = match (self.comp_hessians.take(), &other.comp_hessians) {
            (Some(mut a), Some(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Some(a)
            }
            _ => None,
        };
        self.hess_div = match (self.hess_div.take(), &other.hess_div) {
            (Some(mut a), Some(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Some(a)
            }
            _ => None,
        };
    }
}

/// Third-order Taylor number in `N` variables.
///
/// Carries the value, gradient, Hessian and third-derivative tensor of a
/// scalar expression with respect to `N` seed variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
    pub t: [[[f64; N]; N]; N],
}

impl<const N: usize> Jet3<N> {
    pub fn constant(v: f64) -> Self {
        Jet3 {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
            t: [[[0.0; N]; N]; N],
        }
    }

    /// The `i`-th coordinate variable evaluated at `v`.
    pub fn var(i: usize, v: f64) -> Self {
        let mut j = Self::constant(v);
        j.g[i] = 1.0;
        j
    }

    pub fn vars(z: &[f64; N]) -> [Self; N] {
        std::array::from_fn(|i| Self::var(i, z[i]))
    }

    pub fn scale(self, c: f64) -> Self {
        let mut out = self;
        out.v *= c;
        for a in 0..N {
            out.g[a] *= c;
            for b in 0..N {
                out.h[a][b] *= c;
                for k in 0..N {
                    out.t[a][b][k] *= c;
                }
            }
        }
        out
    }

    pub fn add_const(mut self, c: f64) -> Self {
        self.v += c;
        self
    }

    /// Compose with a scalar function given its first three derivatives at `self.v`.
    pub fn chain(self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        let mut out = Self::constant(f0);
        for a in 0..N {
            out.g[a] = f1 * self.g[a];
            for b in 0..N {
                out.h[a][b] = f2 * self.g[a] * self.g[b] + f1 * self.h[a][b];
                for c in 0..N {
                    out.t[a][b][c] = f3 * self.g[a] * self.g[b] * self.g[c]
                        + f2 * (self.h[a][b] * self.g[c]
                            + self.h[a][c] * self.g[b]
                            + self.h[b][c] * self.g[a])
                        + f1 * self.t[a][b][c];
                }
            }
        }
        out
    }

    pub fn atan(self) -> Self {
        let x = self.v;
        let q = 1.0 / (1.0 + x * x);
        let f1 = q;
        let f2 = -2.0 * x * q * q;
        let f3 = (6.0 * x * x - 2.0) * q * q * q;
        self.chain(x.atan(), f1, f2, f3)
    }

    pub fn square(self) -> Self {
        self * self
    }
}

impl<const N: usize> Add for Jet3<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for a in 0..N {
            self.g[a] += o.g[a];
            for b in 0..N {
                self.h[a][b] += o.h[a][b];
                for c in 0..N {
                    self.t[a][b][c] += o.t[a][b][c];
                }
            }
        }
        self
    }
}

impl<const N: usize> Neg for Jet3<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Sub for Jet3<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Mul for Jet3<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (f, g) = (&self, &o);
        let mut out = Self::constant(f.v * g.v);
        for a in 0..N {
            out.g[a] = f.g[a] * g.v + f.v * g.g[a];
            for b in 0..N {
                out.h[a][b] =
                    f.h[a][b] * g.v + f.g[a] * g.g[b] + f.g[b] * g.g[a] + f.v * g.h[a][b];
                for c in 0..N {
                    out.t[a][b][c] = f.t[a][b][c] * g.v
                        + f.h[a][b] * g.g[c]
                        + f.h[a][c] * g.g[b]
                        + f.h[b][c] * g.g[a]
                        + f.g[a] * g.h[b][c]
                        + f.g[b] * g.h[a][c]
                        + f.g[c] * g.h[a][b]
                        + f.v * g.t[a][b][c];
                }
            }
        }
        out
    }
}

impl<const N: usize> Mul<f64> for Jet3<N> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

/// Assemble the full jet of a vector field from its component Taylor numbers.
pub fn field_jet_from_components<const N: usize>(comps: &[Jet3<N>; N]) -> FieldJet {
    let n = N;
    let mut jet = FieldJet::zeros(n, JetOrder::Second);
    let hess = jet.comp_hessians.as_mut().expect("second order");
    let hdiv = jet.hess_div.as_mut().expect("second order");
    for (i, c) in comps.iter().enumerate() {
        jet.value[i] = c.v;
        for a in 0..n {
            jet.jacobian[i * n + a] = c.g[a];
            for b in 0..n {
                hess[(i * n + a) * n + b] = c.h[a][b];
                hdiv[a * n + b] += c.t[i][a][b];
            }
            jet.grad_div[a] += c.h[i][a];
        }
        jet.divergence += c.g[i];
    }
    jet
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_matches_polynomial() {
        // f = x^2 y, at (2, 3)
        let [x, y] = Jet3::<2>::vars(&[2.0, 3.0]);
        let f = x * x * y;
        assert_eq!(f.v, 12.0);
        assert_eq!(f.g, [12.0, 4.0]);
        assert_eq!(f.h, [[6.0, 4.0], [4.0, 0.0]]);
        assert_eq!(f.t[0][0][1], 2.0);
        assert_eq!(f.t[0][1][0], 2.0);
        assert_eq!(f.t[0][0][0], 0.0);
    }

    #[test]
    fn atan_derivatives_match_finite_differences() {
        let x0 = 0.7;
        let j = Jet3::<1>::var(0, x0).atan();
        let h = 1e-4;
        let f = |x: f64| x.atan();
        let d1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        let d2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);
        let d3 = (f(x0 + 2.0 * h) - 2.0 * f(x0 + h) + 2.0 * f(x0 - h) - f(x0 - 2.0 * h))
            / (2.0 * h * h * h);
        assert!((j.g[0] - d1).abs() < 1e-8);
        assert!((j.h[0][0] - d2).abs() < 1e-6);
        assert!((j.t[0][0][0] - d3).abs() < 1e-4);
    }

    #[test]
    fn jet_order_rejects_other_values() {
        assert!(JetOrder::from_order(3).is_err());
        assert_eq!(JetOrder::from_order(2).unwrap(), JetOrder::Second);
    }
}
