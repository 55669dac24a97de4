//! Two-hidden-layer tanh perceptron with hand-derived spatial jets and a
//! reverse sweep for the network terms that enter the score flow.
//!
//! Parameters live in one flat vector, layer by layer:
//! `W1 (h1 x n0), b1, W2 (h2 x h1), b2, W3 (m x h2), b3`, all row-major.
//! Column 0 of `W1` multiplies the time input, column `1 + q` multiplies the
//! spatial coordinate `z_q`.

use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::jet::{FieldJet, JetOrder};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every weight and bias
    ScaledUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Offsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub total: usize,
}

impl Offsets {
    pub(crate) fn new([n0, h1, h2, m]: [usize; 4]) -> Self {
        let w1 = 0;
        let b1 = w1 + h1 * n0;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + m * h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total: b3 + m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: [usize; 4],
    params: Vec<f64>,
}

/// Borrowed views of the six parameter blocks.
pub(crate) struct Layers<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub w3: &'a [f64],
    pub b3: &'a [f64],
}

pub(crate) struct LayersMut<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
    pub w3: &'a mut [f64],
    pub b3: &'a mut [f64],
}

pub(crate) fn split(flat: &[f64], o: Offsets) -> Layers<'_> {
    Layers {
        w1: &flat[o.w1..o.b1],
        b1: &flat[o.b1..o.w2],
        w2: &flat[o.w2..o.b2],
        b2: &flat[o.b2..o.w3],
        w3: &flat[o.w3..o.b3],
        b3: &flat[o.b3..o.total],
    }
}

pub(crate) fn split_mut(flat: &mut [f64], o: Offsets) -> LayersMut<'_> {
    let (w1, rest) = flat.split_at_mut(o.b1);
    let (b1, rest) = rest.split_at_mut(o.w2 - o.b1);
    let (w2, rest) = rest.split_at_mut(o.b2 - o.w2);
    let (b2, rest) = rest.split_at_mut(o.w3 - o.b2);
    let (w3, b3) = rest.split_at_mut(o.b3 - o.w3);
    LayersMut {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
    }
}

/// Products of the weights that only change when the weights do:
/// `C = W3^T W1k^T` and `V = W2 .* C`, where `W1k` holds the `W1` columns
/// of the controlled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NetCache {
    c: Vec<f64>,
    v: Vec<f64>,
}

/// Per-point activations and their first three derivatives.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    s1: Vec<f64>,
    d1: Vec<f64>,
    e1: Vec<f64>,
    f1: Vec<f64>,
    s2: Vec<f64>,
    d2: Vec<f64>,
    e2: Vec<f64>,
    f2: Vec<f64>,
    kappa: Vec<f64>,
    big_e: Vec<f64>,
    omega: Vec<f64>,
    y: Vec<f64>,
    h: Vec<f64>,
    pu: Vec<f64>,
    qu: Vec<f64>,
    gu: Vec<f64>,
    ve: Vec<f64>,
    vtk: Vec<f64>,
    a2bar: Vec<f64>,
    gubar: Vec<f64>,
    qubar: Vec<f64>,
    s1bar: Vec<f64>,
    a1bar: Vec<f64>,
    pubar: Vec<f64>,
    e1bar_e: Vec<f64>,
    obar: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(mlp: &Mlp) -> Self {
        let [_, h1, h2, _] = mlp.dims;
        let z1 = || vec![0.0; h1];
        let z2 = || vec![0.0; h2];
        Scratch {
            s1: z1(),
            d1: z1(),
            e1: z1(),
            f1: z1(),
            s2: z2(),
            d2: z2(),
            e2: z2(),
            f2: z2(),
            kappa: z2(),
            big_e: z1(),
            omega: z2(),
            y: z2(),
            h: z1(),
            pu: z1(),
            qu: z1(),
            gu: z2(),
            ve: z2(),
            vtk: z1(),
            a2bar: z2(),
            gubar: z2(),
            qubar: z1(),
            s1bar: z1(),
            a1bar: z1(),
            pubar: z1(),
            e1bar_e: z1(),
            obar: z2(),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn activate(a: f64) -> (f64, f64, f64, f64) {
    let s = a.tanh();
    let d = 1.0 - s * s;
    (s, d, -2.0 * s * d, (6.0 * s * s - 2.0) * d)
}

impl Mlp {
    /// `dims = [n + 1, h1, h2, m]`.
    pub fn new(dims: [usize; 4], params: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || dims[0] < 2 {
            return Err(Error::input(format!("invalid layer dims {dims:?}")));
        }
        let total = Offsets::new(dims).total;
        if params.len() != total {
            return Err(Error::input(format!(
                "expected {total} parameters for dims {dims:?}, got {}",
                params.len()
            )));
        }
        Ok(Mlp { dims, params })
    }

    pub fn init(dims: [usize; 4], seed: u64, init: Init) -> Result<Self> {
        let mut mlp = Mlp::new(dims, vec![0.0; Offsets::new(dims).total])?;
        if init == Init::ScaledUniform {
            let mut rng = rng::stream(seed, "init", &[]);
            let o = mlp.offsets();
            let fans = [
                (o.w1, o.w2, dims[0]),
                (o.w2, o.w3, dims[1]),
                (o.w3, o.total, dims[2]),
            ];
            for (lo, hi, fan_in) in fans {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for p in &mut mlp.params[lo..hi] {
                    *p = dist.sample(&mut rng);
                }
            }
        }
        Ok(mlp)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0] - 1
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn offsets(&self) -> Offsets {
        Offsets::new(self.dims)
    }

    pub(crate) fn layers(&self) -> Layers<'_> {
        split(&self.params, self.offsets())
    }

    pub fn is_zero(&self) -> bool {
        self.params.iter().all(|&p| p == 0.0)
    }

    pub(crate) fn cache(&self, offset: usize) -> NetCache {
        let [n0, h1, h2, m] = self.dims;
        let l = self.layers();
        let mut c = vec![0.0; h2 * h1];
        for p in 0..h2 {
            for r in 0..h1 {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += l.w3[i * h2 + p] * l.w1[r * n0 + 1 + offset + i];
                }
                c[p * h1 + r] = acc;
            }
        }
        let v = c.iter().zip(l.w2).map(|(ci, wi)| ci * wi).collect();
        NetCache { c, v }
    }

    fn hidden(&self, t: f64, z: &[f64], ws: &mut Scratch) {
        let [n0, h1, h2, _] = self.dims;
        let l = self.layers();
        for r in 0..h1 {
            let row = &l.w1[r * n0..(r + 1) * n0];
            let a = l.b1[r] + row[0] * t + dot(&row[1..], z);
            let (s, d, e, f) = activate(a);
            ws.s1[r] = s;
            ws.d1[r] = d;
            ws.e1[r] = e;
            ws.f1[r] = f;
        }
        for p in 0..h2 {
            let a = l.b2[p] + dot(&l.w2[p * h1..(p + 1) * h1], &ws.s1);
            let (s, d, e, f) = activate(a);
            ws.s2[p] = s;
            ws.d2[p] = d;
            ws.e2[p] = e;
            ws.f2[p] = f;
        }
    }

    fn output(&self, ws: &Scratch, out: &mut [f64]) {
        let h2 = self.dims[2];
        let l = self.layers();
        for (i, o) in out.iter_mut().enumerate() {
            *o = l.b3[i] + dot(&l.w3[i * h2..(i + 1) * h2], &ws.s2);
        }
    }

    pub(crate) fn forward_into(&self, t: f64, z: &[f64], ws: &mut Scratch, out: &mut [f64]) {
        self.hidden(t, z, ws);
        self.output(ws, out);
    }

    pub fn forward(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut ws = Scratch::new(self);
        let mut out = vec![0.0; self.output_dim()];
        self.forward_into(t, z, &mut ws, &mut out);
        out
    }

    /// Network output `N`, its divergence over the controlled coordinates,
    /// and `grad N^T w + grad(div N)` over the full state, in `O(h1 h2)`.
    pub(crate) fn flow_terms_into(
        &self,
        cache: &NetCache,
        t: f64,
        z: &[f64],
        w: &[f64],
        ws: &mut Scratch,
        out: &mut [f64],
        g: &mut [f64],
    ) -> f64 {
        let [n0, h1, h2, m] = self.dims;
        let l = self.layers();
        self.hidden(t, z, ws);
        self.output(ws, out);

        ws.omega.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..m {
            axpy(w[i], &l.w3[i * h2..(i + 1) * h2], &mut ws.omega);
        }
        ws.big_e.iter_mut().for_each(|e| *e = 0.0);
        let mut div = 0.0;
        for p in 0..h2 {
            let row = &cache.v[p * h1..(p + 1) * h1];
            let k = dot(row, &ws.d1);
            ws.kappa[p] = k;
            div += ws.d2[p] * k;
            axpy(ws.d2[p], row, &mut ws.big_e);
            ws.y[p] = ws.omega[p] * ws.d2[p] + ws.e2[p] * k;
        }
        ws.h.iter_mut().for_each(|h| *h = 0.0);
        for p in 0..h2 {
            axpy(ws.y[p], &l.w2[p * h1..(p + 1) * h1], &mut ws.h);
        }
        g.iter_mut().for_each(|gi| *gi = 0.0);
        for r in 0..h1 {
            let c = ws.d1[r] * ws.h[r] + ws.e1[r] * ws.big_e[r];
            axpy(c, &l.w1[r * n0 + 1..(r + 1) * n0], g);
        }
        div
    }

    /// Reverse sweep of `Psi = a . N + w^T (grad N) u + u . grad(div N)` at
    /// one point, with `a`, `w` and `u` held fixed.
    ///
    /// Adds `dPsi/dtheta` into `grad` (the parts flowing through the cached
    /// weight products go into `r_acc`; see [`Mlp::finish_gradient`]), writes
    /// `dPsi/dz` into `z_bar` and `(grad N) u` into `jn_u`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backprop_into(
        &self,
        cache: &NetCache,
        t: f64,
        z: &[f64],
        w: &[f64],
        u: &[f64],
        a: &[f64],
        ws: &mut Scratch,
        grad: &mut [f64],
        r_acc: &mut [f64],
        z_bar: &mut [f64],
        jn_u: &mut [f64],
    ) {
        let [n0, h1, h2, m] = self.dims;
        let o = self.offsets();
        let l = self.layers();
        let gl = split_mut(grad, o);
        self.hidden(t, z, ws);

        ws.omega.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            axpy(w[i], &l.w3[i * h2..(i + 1) * h2], &mut ws.omega);
        }
        for r in 0..h1 {
            let pu = dot(&l.w1[r * n0 + 1..(r + 1) * n0], u);
            ws.pu[r] = pu;
            ws.qu[r] = ws.d1[r] * pu;
            ws.e1bar_e[r] = ws.e1[r] * pu; // E-bar
        }

        ws.big_e.iter_mut().for_each(|x| *x = 0.0);
        ws.vtk.iter_mut().for_each(|x| *x = 0.0);
        for p in 0..h2 {
            let gu = dot(&l.w2[p * h1..(p + 1) * h1], &ws.qu);
            ws.gu[p] = gu;
            let vrow = &cache.v[p * h1..(p + 1) * h1];
            let k = dot(vrow, &ws.d1);
            ws.kappa[p] = k;
            axpy(ws.d2[p], vrow, &mut ws.big_e);
            ws.ve[p] = dot(vrow, &ws.e1bar_e);
            let kbar = ws.e2[p] * gu;
            axpy(kbar, vrow, &mut ws.vtk);
            let rrow = &mut r_acc[p * h1..(p + 1) * h1];
            let d2 = ws.d2[p];
            for ((rv, d1), eb) in rrow.iter_mut().zip(&ws.d1).zip(&ws.e1bar_e) {
                *rv += kbar * d1 + d2 * eb;
            }
        }

        for p in 0..h2 {
            let (d2, e2, f2, gu) = (ws.d2[p], ws.e2[p], ws.f2[p], ws.gu[p]);
            ws.gubar[p] = ws.omega[p] * d2 + e2 * ws.kappa[p];
            ws.obar[p] = gu * d2;
            let d2bar = ws.omega[p] * gu + ws.ve[p];
            let e2bar = ws.kappa[p] * gu;
            let mut s2bar = 0.0;
            for i in 0..m {
                s2bar += l.w3[i * h2 + p] * a[i];
            }
            ws.a2bar[p] = s2bar * d2 + d2bar * e2 + e2bar * f2;
        }

        ws.qubar.iter_mut().for_each(|x| *x = 0.0);
        ws.s1bar.iter_mut().for_each(|x| *x = 0.0);
        for p in 0..h2 {
            let row = &l.w2[p * h1..(p + 1) * h1];
            let (gb, ab) = (ws.gubar[p], ws.a2bar[p]);
            axpy(gb, row, &mut ws.qubar);
            axpy(ab, row, &mut ws.s1bar);
            let grow = &mut gl.w2[p * h1..(p + 1) * h1];
            for ((gv, q), s) in grow.iter_mut().zip(&ws.qu).zip(&ws.s1) {
                *gv += gb * q + ab * s;
            }
            gl.b2[p] += ab;
        }

        for r in 0..h1 {
            let (d1, e1, f1) = (ws.d1[r], ws.e1[r], ws.f1[r]);
            let e = ws.big_e[r];
            ws.pubar[r] = e1 * e + ws.qubar[r] * d1;
            let d1bar = ws.qubar[r] * ws.pu[r] + ws.vtk[r];
            let e1bar = ws.pu[r] * e;
            ws.a1bar[r] = ws.s1bar[r] * d1 + d1bar * e1 + e1bar * f1;
        }

        z_bar.iter_mut().for_each(|x| *x = 0.0);
        for r in 0..h1 {
            let (ab, pb) = (ws.a1bar[r], ws.pubar[r]);
            let row = &l.w1[r * n0 + 1..(r + 1) * n0];
            let grow = &mut gl.w1[r * n0..(r + 1) * n0];
            grow[0] += ab * t;
            for ((gv, zq), uq) in grow[1..].iter_mut().zip(z).zip(u) {
                *gv += ab * zq + pb * uq;
            }
            gl.b1[r] += ab;
            axpy(ab, row, z_bar);
        }

        for i in 0..m {
            let row = &l.w3[i * h2..(i + 1) * h2];
            jn_u[i] = dot(row, &ws.obar);
            let grow = &mut gl.w3[i * h2..(i + 1) * h2];
            let (wi, ai) = (w[i], a[i]);
            for ((gv, ob), s) in grow.iter_mut().zip(&ws.obar).zip(&ws.s2) {
                *gv += wi * ob + ai * s;
            }
            gl.b3[i] += ai;
        }
    }

    /// Fold the accumulated `dPsi/dV` into the weight gradient.
    pub(crate) fn finish_gradient(
        &self,
        cache: &NetCache,
        offset: usize,
        r_acc: &[f64],
        grad: &mut [f64],
    ) {
        let [n0, h1, h2, m] = self.dims;
        let o = self.offsets();
        let l = self.layers();
        let gl = split_mut(grad, o);
        for p in 0..h2 {
            for r in 0..h1 {
                let idx = p * h1 + r;
                let rv = r_acc[idx];
                if rv == 0.0 {
                    continue;
                }
                gl.w2[idx] += cache.c[idx] * rv;
                let cbar = l.w2[idx] * rv;
                for i in 0..m {
                    gl.w3[i * h2 + p] += cbar * l.w1[r * n0 + 1 + offset + i];
                    gl.w1[r * n0 + 1 + offset + i] += cbar * l.w3[i * h2 + p];
                }
            }
        }
    }

    /// Exact spatial jet of the network embedded at coordinates
    /// `offset..offset + m` of an `n`-dimensional field.
    pub(crate) fn jet(
        &self,
        cache: &NetCache,
        offset: usize,
        t: f64,
        z: &[f64],
        order: JetOrder,
    ) -> FieldJet {
        let [n0, h1, h2, m] = self.dims;
        let n = n0 - 1;
        let l = self.layers();
        let mut ws = Scratch::new(self);
        self.hidden(t, z, &mut ws);
        let w1x = |r: usize, q: usize| l.w1[r * n0 + 1 + q];

        let mut g2 = vec![0.0; h2 * n];
        for p in 0..h2 {
            for r in 0..h1 {
                let c = l.w2[p * h1 + r] * ws.d1[r];
                if c == 0.0 {
                    continue;
                }
                for q in 0..n {
                    g2[p * n + q] += c * w1x(r, q);
                }
            }
        }
        let mut kappa = vec![0.0; h2];
        let mut big_e = vec![0.0; h1];
        for p in 0..h2 {
            let row = &cache.v[p * h1..(p + 1) * h1];
            kappa[p] = dot(row, &ws.d1);
            axpy(ws.d2[p], row, &mut big_e);
        }

        let mut jet = FieldJet::zeros(n, order);
        let mut out = vec![0.0; m];
        self.output(&ws, &mut out);
        for i in 0..m {
            let k = offset + i;
            jet.value[k] = out[i];
            for p in 0..h2 {
                let c = l.w3[i * h2 + p] * ws.d2[p];
                for q in 0..n {
                    jet.jacobian[k * n + q] += c * g2[p * n + q];
                }
            }
        }
        jet.divergence = dot(&ws.d2, &kappa);
        for q in 0..n {
            let mut acc = 0.0;
            for p in 0..h2 {
                acc += ws.e2[p] * kappa[p] * g2[p * n + q];
            }
            for r in 0..h1 {
                acc += ws.e1[r] * big_e[r] * w1x(r, q);
            }
            jet.grad_div[q] = acc;
        }

        if order == JetOrder::Second {
            // sum_p cp G2_pa G2_pb + sum_r cr W1x_ra W1x_rb
            let quad = |cp: &[f64], cr: &[f64], out: &mut [f64]| {
                for a in 0..n {
                    for b in a..n {
                        let mut acc = 0.0;
                        for p in 0..h2 {
                            acc += cp[p] * g2[p * n + a] * g2[p * n + b];
                        }
                        for r in 0..h1 {
                            acc += cr[r] * w1x(r, a) * w1x(r, b);
                        }
                        out[a * n + b] += acc;
                        if a != b {
                            out[b * n + a] += acc;
                        }
                    }
                }
            };
            let hess = jet.comp_hessians.as_mut().expect("second order");
            for i in 0..m {
                let w3i = &l.w3[i * h2..(i + 1) * h2];
                let cp: Vec<f64> = w3i.iter().zip(&ws.e2).map(|(w, e)| w * e).collect();
                let mut cr = vec![0.0; h1];
                for p in 0..h2 {
                    axpy(w3i[p] * ws.d2[p], &l.w2[p * h1..(p + 1) * h1], &mut cr);
                }
                cr.iter_mut().zip(&ws.e1).for_each(|(c, e)| *c *= e);
                let k = offset + i;
                quad(&cp, &cr, &mut hess[k * n * n..(k + 1) * n * n]);
            }

            let hd = jet.hess_div.as_mut().expect("second order");
            let cp: Vec<f64> = ws.f2.iter().zip(&kappa).map(|(f, k)| f * k).collect();
            let mut cr = vec![0.0; h1];
            for p in 0..h2 {
                axpy(ws.e2[p] * kappa[p], &l.w2[p * h1..(p + 1) * h1], &mut cr);
            }
            for r in 0..h1 {
                cr[r] = ws.e1[r] * cr[r] + ws.f1[r] * big_e[r];
            }
            quad(&cp, &cr, hd);
            // cross terms K'^T diag(e2) G2 + transpose, K' = V diag(e1) W1x
            let mut kp = vec![0.0; h2 * n];
            for p in 0..h2 {
                for r in 0..h1 {
                    let c = cache.v[p * h1 + r] * ws.e1[r];
                    if c == 0.0 {
                        continue;
                    }
                    for q in 0..n {
                        kp[p * n + q] += c * w1x(r, q);
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for p in 0..h2 {
                        acc += ws.e2[p] * (kp[p * n + a] * g2[p * n + b] + g2[p * n + a] * kp[p * n + b]);
                    }
                    hd[a * n + b] += acc;
                }
            }
        }
        jet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_cover_all_parameters() {
        let o = Offsets::new([3, 4, 5, 2]);
        assert_eq!(o.total, 4 * 3 + 4 + 5 * 4 + 5 + 2 * 5 + 2);
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let a = Mlp::init([3, 10, 10, 2], 7, Init::ScaledUniform).unwrap();
        let b = Mlp::init([3, 10, 10, 2], 7, Init::ScaledUniform).unwrap();
        let c = Mlp::init([3, 10, 10, 2], 8, Init::ScaledUniform).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let o = a.offsets();
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.params()[..o.w2].iter().all(|p| p.abs() <= bound));
        let bound = 1.0 / 10f64.sqrt();
        assert!(a.params()[o.w2..].iter().all(|p| p.abs() <= bound));
        let z = Mlp::init([3, 10, 10, 2], 0, Init::Zero).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn flow_terms_agree_with_full_jet() {
        let mlp = Mlp::init([4, 7, 6, 3], 3, Init::ScaledUniform).unwrap();
        let cache = mlp.cache(0);
        let z = [0.3, -0.4, 0.9];
        let w = [0.2, -1.1, 0.5];
        let jet = mlp.jet(&cache, 0, 0.4, &z, JetOrder::First);
        let mut ws = Scratch::new(&mlp);
        let mut out = vec![0.0; 3];
        let mut g = vec![0.0; 3];
        let div = mlp.flow_terms_into(&cache, 0.4, &z, &w, &mut ws, &mut out, &mut g);
        assert!((div - jet.divergence).abs() < 1e-14);
        let expect = jet.score_drift(&w);
        for q in 0..3 {
            assert!((g[q] - expect[q]).abs() < 1e-13);
            assert!((out[q] - jet.value[q]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_mismatched_parameter_count() {
        assert!(Mlp::new([3, 2, 2, 2], vec![0.0; 5]).is_err());
        assert!(Mlp::new([1, 2, 2, 2], vec![]).is_err());
    }
}
