//! Velocity fields `F(t, z) = B(z) + P N(t, z)` where `B` is a known
//! baseline drift and `N` a tanh network whose output is embedded at the
//! controlled coordinates by `P`.

mod checkpoint;
mod mlp;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use mlp::{Init, Mlp, NetCache};
pub(crate) use mlp::Scratch;

use crate::error::{Error, Result};
use crate::jet::{FieldJet, JetOrder};
use crate::problems::ProblemSpec;

/// The quantities one forward-Euler step of the score flow consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTerms {
    pub value: Vec<f64>,
    pub divergence: f64,
    /// `grad F^T s + grad(div F)`
    pub score_drift: Vec<f64>,
}

/// A time-dependent vector field on `R^n` with analytic spatial derivatives.
pub trait Field: Send + Sync {
    fn state_dim(&self) -> usize;

    fn evaluate(&self, t: f64, z: &[f64]) -> Result<Vec<f64>>;

    fn jet(&self, t: f64, z: &[f64], order: JetOrder) -> Result<FieldJet>;

    fn flow_terms(&self, t: f64, z: &[f64], s: &[f64]) -> Result<FlowTerms> {
        let jet = self.jet(t, z, JetOrder::First)?;
        Ok(FlowTerms {
            score_drift: jet.score_drift(s),
            value: jet.value,
            divergence: jet.divergence,
        })
    }
}

pub(crate) fn check_dim(expected: usize, z: &[f64]) -> Result<()> {
    if z.len() != expected {
        return Err(Error::input(format!(
            "point has dimension {}, field expects {expected}",
            z.len()
        )));
    }
    Ok(())
}

/// The known drift added to the network output.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Zero(usize),
    /// `z -> A z + a`, `A` row-major
    Affine { a: Vec<f64>, shift: Vec<f64> },
    Drift(ProblemSpec),
}

impl Baseline {
    pub fn affine(a: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        let n = shift.len();
        if a.len() != n * n {
            return Err(Error::input("affine baseline matrix must be n x n"));
        }
        Ok(Baseline::Affine { a, shift })
    }

    pub fn dim(&self) -> usize {
        match self {
            Baseline::Zero(n) => *n,
            Baseline::Affine { shift, .. } => shift.len(),
            Baseline::Drift(spec) => spec.state_dim(),
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z)?;
        match self {
            Baseline::Zero(n) => Ok(vec![0.0; *n]),
            Baseline::Affine { a, shift } => {
                let n = shift.len();
                Ok((0..n)
                    .map(|i| shift[i] + (0..n).map(|q| a[i * n + q] * z[q]).sum::<f64>())
                    .collect())
            }
            Baseline::Drift(spec) => spec.drift(z),
        }
    }

    pub fn jet(&self, z: &[f64], order: JetOrder) -> Result<FieldJet> {
        check_dim(self.dim(), z)?;
        match self {
            Baseline::Zero(n) => Ok(FieldJet::zeros(*n, order)),
            Baseline::Affine { a, .. } => {
                let mut jet = FieldJet::zeros(self.dim(), order);
                jet.value = self.value(z)?;
                jet.jacobian = a.clone();
                jet.divergence = jet.trace_jacobian();
                Ok(jet)
            }
            Baseline::Drift(spec) => {
                let mut jet = spec.drift_jet(z)?;
                if order == JetOrder::First {
                    jet.comp_hessians = None;
                    jet.hess_div = None;
                }
                Ok(jet)
            }
        }
    }
}

/// Composed velocity field: baseline drift plus an embedded tanh network.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    net: Mlp,
    baseline: Baseline,
    offset: usize,
    cache: NetCache,
}

impl VelocityField {
    pub fn new(net: Mlp, baseline: Baseline, offset: usize) -> Result<Self> {
        let n = baseline.dim();
        if net.input_dim() != n {
            return Err(Error::input(format!(
                "network takes {} spatial inputs but the baseline has dimension {n}",
                net.input_dim()
            )));
        }
        if offset + net.output_dim() > n {
            return Err(Error::input(format!(
                "network output {} at offset {offset} exceeds state dimension {n}",
                net.output_dim()
            )));
        }
        let cache = net.cache(offset);
        Ok(VelocityField {
            net,
            baseline,
            offset,
            cache,
        })
    }

    /// Network sized for `problem` with hidden widths `hidden`, on top of
    /// the problem drift.
    pub fn for_problem(
        problem: &ProblemSpec,
        hidden: [usize; 2],
        seed: u64,
        init: Init,
    ) -> Result<Self> {
        let layout = problem.layout();
        let dims = [
            layout.state_dim + 1,
            hidden[0],
            hidden[1],
            layout.control_dim,
        ];
        let net = Mlp::init(dims, seed, init)?;
        VelocityField::new(net, Baseline::Drift(problem.clone()), layout.offset)
    }

    /// Zero network over `baseline`: evaluates to the baseline exactly.
    pub fn baseline_only(baseline: Baseline, hidden: [usize; 2]) -> Result<Self> {
        let n = baseline.dim();
        let net = Mlp::init([n + 1, hidden[0], hidden[1], n], 0, Init::Zero)?;
        VelocityField::new(net, baseline, 0)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn baseline(&self) -> &Baseline {
        &self.baseline
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn control_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn layer_dims(&self) -> [usize; 4] {
        self.net.dims()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Overwrite the weights and refresh the cached weight products.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.net.num_params() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                self.net.num_params(),
                params.len()
            )));
        }
        self.net.params_mut().copy_from_slice(params);
        self.cache = self.net.cache(self.offset);
        Ok(())
    }

    /// Mutate the weights in place; the cache is refreshed afterwards.
    pub fn update_params(&mut self, f: impl FnOnce(&mut [f64])) {
        f(self.net.params_mut());
        self.cache = self.net.cache(self.offset);
    }

    pub(crate) fn cache(&self) -> &NetCache {
        &self.cache
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch::new(&self.net)
    }
}

impl Field for VelocityField {
    fn state_dim(&self) -> usize {
        self.baseline.dim()
    }

    fn evaluate(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.baseline.value(z)?;
        let n = self.net.forward(t, z);
        for (o, v) in out[self.offset..].iter_mut().zip(&n) {
            *o += v;
        }
        Ok(out)
    }

    fn jet(&self, t: f64, z: &[f64], order: JetOrder) -> Result<FieldJet> {
        let mut jet = self.baseline.jet(z, order)?;
        let net = self.net.jet(&self.cache, self.offset, t, z, order);
        jet.accumulate(&net);
        Ok(jet)
    }

    fn flow_terms(&self, t: f64, z: &[f64], s: &[f64]) -> Result<FlowTerms> {
        let n = self.state_dim();
        check_dim(n, s)?;
        let base = self.baseline.jet(z, JetOrder::First)?;
        let m = self.control_dim();
        let mut out = vec![0.0; m];
        let mut g = vec![0.0; n];
        let mut ws = self.scratch();
        let w = &s[self.offset..self.offset + m];
        let div = self
            .net
            .flow_terms_into(&self.cache, t, z, w, &mut ws, &mut out, &mut g);
        let mut value = base.value.clone();
        for (v, o) in value[self.offset..].iter_mut().zip(&out) {
            *v += o;
        }
        let mut score_drift = base.score_drift(s);
        for (a, b) in score_drift.iter_mut().zip(&g) {
            *a += b;
        }
        Ok(FlowTerms {
            value,
            divergence: base.divergence + div,
            score_drift,
        })
    }
}

/// Central-difference approximation of [`Field::jet`].
///
/// The Jacobian and divergence come from differences of `evaluate`; the
/// higher derivatives come from differences of the next-lower analytic
/// quantity (`grad_div` from the analytic divergence, component Hessians
/// from the analytic Jacobian, `hess_div` from the analytic `grad_div`), so
/// every order is checked against an already-checked lower order with
/// `O(h^2)` truncation and negligible roundoff.
pub fn fd_jet(field: &dyn Field, t: f64, z: &[f64], h: f64, order: JetOrder) -> Result<FieldJet> {
    if !(h > 0.0) {
        return Err(Error::input("finite-difference step must be positive"));
    }
    let n = field.state_dim();
    check_dim(n, z)?;
    let mut jet = FieldJet::zeros(n, order);
    jet.value = field.evaluate(t, z)?;
    let shifted = |q: usize, sign: f64| {
        let mut p = z.to_vec();
        p[q] += sign * h;
        p
    };
    for q in 0..n {
        let (zp, zm) = (shifted(q, 1.0), shifted(q, -1.0));
        let fp = field.evaluate(t, &zp)?;
        let fm = field.evaluate(t, &zm)?;
        let jp = field.jet(t, &zp, JetOrder::First)?;
        let jm = field.jet(t, &zm, JetOrder::First)?;
        for i in 0..n {
            jet.jacobian[i * n + q] = (fp[i] - fm[i]) / (2.0 * h);
        }
        jet.grad_div[q] = (jp.divergence - jm.divergence) / (2.0 * h);
        if order == JetOrder::Second {
            let hess = jet.comp_hessians.as_mut().unwrap();
            for i in 0..n {
                for a in 0..n {
                    hess[(i * n + a) * n + q] = (jp.jac(i, a) - jm.jac(i, a)) / (2.0 * h);
                }
            }
            let hd = jet.hess_div.as_mut().unwrap();
            for a in 0..n {
                hd[a * n + q] = (jp.grad_div[a] - jm.grad_div[a]) / (2.0 * h);
            }
        }
    }
    jet.divergence = jet.trace_jacobian();
    Ok(jet)
}

/// `max |a - b| / max(max |b|, 1)`: relative to the size of the reference
/// block, absolute for blocks of order one or smaller.
pub fn block_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
