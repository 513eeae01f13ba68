//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! for every node that depends on a parameter or a tracked variable.
//! Graphs are cheap, single-use, and not shared between threads; data
//! parallel training builds one graph per example.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{matmul_acc, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward closure: receives the output gradient, the node table (for input
/// values) and the gradient accumulator.
pub type BackFn = Box<dyn Fn(&Tensor, &[Node], &mut Grads)>;

pub struct Node {
    value: Tensor,
    requires_grad: bool,
    back: Option<BackFn>,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Gradient accumulator produced by [`Graph::backward`].
pub struct Grads {
    slots: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    tracked: Vec<bool>,
}

impl Grads {
    /// Whether gradients flow into `v` at all.
    pub fn wants(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Mutable gradient buffer for `v`, zero-initialised on first touch.
    pub fn slot(&mut self, v: Var) -> &mut [f64] {
        let shape = &self.shapes[v.0];
        self.slots[v.0]
            .get_or_insert_with(|| Tensor::zeros(shape))
            .data_mut()
    }

    pub fn add(&mut self, v: Var, t: &Tensor) {
        if !self.tracked[v.0] {
            return;
        }
        for (a, b) in self.slot(v).iter_mut().zip(t.data()) {
            *a += b;
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn val(nodes: &[Node], v: Var) -> &Tensor {
    &nodes[v.0].value
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, back: Option<BackFn>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            back: if requires_grad { back } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a custom differentiable operation. `back` must add the
    /// gradient of each input into `Grads`.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        back: impl Fn(&Tensor, &[Node], &mut Grads) + 'static,
    ) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, rg, Some(Box::new(back)))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, None)
    }

    /// A leaf whose gradient is tracked (used by tests and input attribution).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, true, None)
    }

    /// Looks up a named parameter; repeated lookups return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
            .clone();
        let v = self.push(t, store.is_trainable(name), None);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Runs reverse accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            tracked: self.nodes.iter().map(|n| n.requires_grad).collect(),
        };
        grads.slot(loss)[0] = 1.0;
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let Some(gout) = grads.slots[i].take() else {
                continue;
            };
            back(&gout, &self.nodes, &mut grads);
        }
        grads
    }

    /// Gradients of every parameter referenced by this graph.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    // ---------------------------------------------------------------- elementwise

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.custom(&[a, b], value, move |g, _, gr| {
            gr.add(a, g);
            gr.add(b, g);
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.custom(&[a, b], value, move |g, _, gr| {
            gr.add(a, g);
            if gr.wants(b) {
                gr.add(b, &g.map(|v| -v));
            }
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.custom(&[a, b], value, move |g, n, gr| {
            if gr.wants(a) {
                gr.add(a, &g.zip_map(val(n, b), |x, y| x * y));
            }
            if gr.wants(b) {
                gr.add(b, &g.zip_map(val(n, a), |x, y| x * y));
            }
        })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.custom(&[a], value, move |g, _, gr| gr.add(a, &g.map(|v| v * s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.custom(&[a], value, move |g, _, gr| gr.add(a, g))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(a).map(f);
        let out = self.nodes.len();
        self.custom(&[a], value, move |g, n, gr| {
            let x = val(n, a);
            let y = &n[out].value;
            let mut d = g.clone();
            for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                *dv *= df(xv, yv);
            }
            gr.add(a, &d);
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            a,
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    // ---------------------------------------------------------------- broadcast

    /// `x[c, t] + b[c]` with `b` a column `[C, 1]`.
    pub fn add_col(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let (c, t) = (xv.rows(), xv.cols());
        assert_eq!(bv.shape(), [c, 1], "add_col bias shape");
        let mut out = xv.clone();
        for i in 0..c {
            let bi = bv.data()[i];
            for o in &mut out.data_mut()[i * t..(i + 1) * t] {
                *o += bi;
            }
        }
        self.custom(&[x, b], out, move |g, _, gr| {
            gr.add(x, g);
            if gr.wants(b) {
                let s = gr.slot(b);
                for i in 0..c {
                    s[i] += g.data()[i * t..(i + 1) * t].iter().sum::<f64>();
                }
            }
        })
    }

    /// `x[c, t] · s[c]` with `s` a column `[C, 1]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        let (c, t) = (xv.rows(), xv.cols());
        assert_eq!(sv.shape(), [c, 1], "mul_col scale shape");
        let mut out = xv.clone();
        for i in 0..c {
            let si = sv.data()[i];
            for o in &mut out.data_mut()[i * t..(i + 1) * t] {
                *o *= si;
            }
        }
        self.custom(&[x, s], out, move |g, n, gr| {
            let (xv, sv) = (val(n, x), val(n, s));
            if gr.wants(x) {
                let dx = gr.slot(x);
                for i in 0..c {
                    let si = sv.data()[i];
                    for j in 0..t {
                        dx[i * t + j] += g.data()[i * t + j] * si;
                    }
                }
            }
            if gr.wants(s) {
                let ds = gr.slot(s);
                for i in 0..c {
                    let row = i * t..(i + 1) * t;
                    ds[i] += g.data()[row.clone()]
                        .iter()
                        .zip(&xv.data()[row])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        })
    }

    // ---------------------------------------------------------------- linear algebra

    /// `a [M, K] · b [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(bv.rows(), k, "matmul inner dimension");
        let mut out = Tensor::zeros(&[m, n]);
        matmul_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.custom(&[a, b], out, move |g, nodes, gr| {
            if gr.wants(a) {
                let bt = val(nodes, b).transpose();
                matmul_acc(g.data(), bt.data(), gr.slot(a), m, n, k);
            }
            if gr.wants(b) {
                let at = val(nodes, a).transpose();
                matmul_acc(at.data(), g.data(), gr.slot(b), k, m, n);
            }
        })
    }

    /// Stride-1 "same" dilated convolution. `x [Ci, T]`, `w [Co, Ci, K]`,
    /// optional bias `[Co, 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, dilation: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (ci, t) = (xv.rows(), xv.cols());
        let (co, wci, k) = (wv.dim(0), wv.dim(1), wv.dim(2));
        assert_eq!(ci, wci, "conv1d channel mismatch");
        let pad_left = dilation * (k - 1) / 2;
        let mut out = Tensor::zeros(&[co, t]);
        {
            let od = out.data_mut();
            let (xd, wd) = (xv.data(), wv.data());
            for o in 0..co {
                let orow = &mut od[o * t..(o + 1) * t];
                for i in 0..ci {
                    let xrow = &xd[i * t..(i + 1) * t];
                    for kk in 0..k {
                        let wv = wd[(o * ci + i) * k + kk];
                        let shift = (kk * dilation) as isize - pad_left as isize;
                        let (lo, hi) = valid_range(t, shift);
                        for j in lo..hi {
                            orow[j] += wv * xrow[(j as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data().to_vec();
            assert_eq!(bd.len(), co, "conv1d bias");
            for (o, bo) in bd.iter().enumerate() {
                for v in &mut out.data_mut()[o * t..(o + 1) * t] {
                    *v += bo;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.custom(&inputs, out, move |g, n, gr| {
            let gd = g.data();
            if gr.wants(x) {
                let wd = val(n, w).data().to_vec();
                let dx = gr.slot(x);
                for o in 0..co {
                    let grow = &gd[o * t..(o + 1) * t];
                    for i in 0..ci {
                        for kk in 0..k {
                            let wv = wd[(o * ci + i) * k + kk];
                            let shift = (kk * dilation) as isize - pad_left as isize;
                            let (lo, hi) = valid_range(t, shift);
                            let dxrow = &mut dx[i * t..(i + 1) * t];
                            for j in lo..hi {
                                dxrow[(j as isize + shift) as usize] += wv * grow[j];
                            }
                        }
                    }
                }
            }
            if gr.wants(w) {
                let xd = val(n, x).data().to_vec();
                let dw = gr.slot(w);
                for o in 0..co {
                    let grow = &gd[o * t..(o + 1) * t];
                    for i in 0..ci {
                        let xrow = &xd[i * t..(i + 1) * t];
                        for kk in 0..k {
                            let shift = (kk * dilation) as isize - pad_left as isize;
                            let (lo, hi) = valid_range(t, shift);
                            let mut acc = 0.0;
                            for j in lo..hi {
                                acc += grow[j] * xrow[(j as isize + shift) as usize];
                            }
                            dw[(o * ci + i) * k + kk] += acc;
                        }
                    }
                }
            }
            if let Some(b) = bias {
                if gr.wants(b) {
                    let db = gr.slot(b);
                    for o in 0..co {
                        db[o] += gd[o * t..(o + 1) * t].iter().sum::<f64>();
                    }
                }
            }
        })
    }

    /// Transposed convolution upsampling by `stride`: output length is
    /// exactly `T · stride`. `w [Ci, Co, K]` with `K ≥ stride`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (ci, t) = (xv.rows(), xv.cols());
        let (wci, co, k) = (wv.dim(0), wv.dim(1), wv.dim(2));
        assert_eq!(ci, wci, "conv_transpose1d channel mismatch");
        assert!(k >= stride, "kernel shorter than stride");
        let crop = (k - stride) / 2;
        let tout = t * stride;
        // out[o, j*s + kk - crop] += x[i, j] * w[i, o, kk]
        let mut out = Tensor::zeros(&[co, tout]);
        {
            let (xd, wd) = (xv.data(), wv.data());
            let od = out.data_mut();
            for i in 0..ci {
                let xrow = &xd[i * t..(i + 1) * t];
                for o in 0..co {
                    let orow = &mut od[o * tout..(o + 1) * tout];
                    for kk in 0..k {
                        let wv = wd[(i * co + o) * k + kk];
                        for (j, &xj) in xrow.iter().enumerate() {
                            let pos = (j * stride + kk) as isize - crop as isize;
                            if pos >= 0 && (pos as usize) < tout {
                                orow[pos as usize] += wv * xj;
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data().to_vec();
            for (o, bo) in bd.iter().enumerate() {
                for v in &mut out.data_mut()[o * tout..(o + 1) * tout] {
                    *v += bo;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.custom(&inputs, out, move |g, n, gr| {
            let gd = g.data();
            let (xd, wd) = (val(n, x).data(), val(n, w).data());
            if gr.wants(x) {
                let dx = gr.slot(x);
                for i in 0..ci {
                    for o in 0..co {
                        let grow = &gd[o * tout..(o + 1) * tout];
                        for kk in 0..k {
                            let wv = wd[(i * co + o) * k + kk];
                            for j in 0..t {
                                let pos = (j * stride + kk) as isize - crop as isize;
                                if pos >= 0 && (pos as usize) < tout {
                                    dx[i * t + j] += wv * grow[pos as usize];
                                }
                            }
                        }
                    }
                }
            }
            if gr.wants(w) {
                let dw = gr.slot(w);
                for i in 0..ci {
                    let xrow = &xd[i * t..(i + 1) * t];
                    for o in 0..co {
                        let grow = &gd[o * tout..(o + 1) * tout];
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for (j, &xj) in xrow.iter().enumerate() {
                                let pos = (j * stride + kk) as isize - crop as isize;
                                if pos >= 0 && (pos as usize) < tout {
                                    acc += xj * grow[pos as usize];
                                }
                            }
                            dw[(i * co + o) * k + kk] += acc;
                        }
                    }
                }
            }
            if let Some(b) = bias {
                if gr.wants(b) {
                    let db = gr.slot(b);
                    for o in 0..co {
                        db[o] += gd[o * tout..(o + 1) * tout].iter().sum::<f64>();
                    }
                }
            }
        })
    }

    // ---------------------------------------------------------------- shape

    /// Rows `[start, start+len)` of a 2-D tensor.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let t = xv.cols();
        assert!(start + len <= xv.rows());
        let out = Tensor::from_vec(&[len, t], xv.data()[start * t..(start + len) * t].to_vec());
        self.custom(&[x], out, move |g, _, gr| {
            let s = gr.slot(x);
            for (a, b) in s[start * t..(start + len) * t].iter_mut().zip(g.data()) {
                *a += b;
            }
        })
    }

    /// Stacks 2-D tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let t = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), t, "concat_rows column mismatch");
            offsets.push((p, data.len(), pv.len()));
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / t;
        let out = Tensor::from_vec(&[rows, t], data);
        self.custom(parts, out, move |g, _, gr| {
            for &(p, off, len) in &offsets {
                if gr.wants(p) {
                    for (a, b) in gr.slot(p).iter_mut().zip(&g.data()[off..off + len]) {
                        *a += b;
                    }
                }
            }
        })
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_cols(start, len);
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        self.custom(&[x], out, move |g, _, gr| {
            let s = gr.slot(x);
            for i in 0..r {
                for j in 0..len {
                    s[i * c + start + j] += g.data()[i * len + j];
                }
            }
        })
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.custom(&[x], out, move |g, _, gr| {
            gr.add(x, &g.transpose());
        })
    }

    // ---------------------------------------------------------------- normalisation / pooling

    /// Per-column (per-frame) layer normalisation across rows, no affine.
    pub fn layer_norm_cols(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (c, t) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(&[c, t]);
        let mut inv_std = vec![0.0; t];
        for j in 0..t {
            let mean = (0..c).map(|i| xv.at(i, j)).sum::<f64>() / c as f64;
            let var = (0..c).map(|i| (xv.at(i, j) - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[j] = is;
            for i in 0..c {
                out.data_mut()[i * t + j] = (xv.at(i, j) - mean) * is;
            }
        }
        let me = self.nodes.len();
        self.custom(&[x], out, move |g, n, gr| {
            let y = &n[me].value;
            let dx = gr.slot(x);
            for j in 0..t {
                let mut gm = 0.0;
                let mut gy = 0.0;
                for i in 0..c {
                    let gij = g.data()[i * t + j];
                    gm += gij;
                    gy += gij * y.data()[i * t + j];
                }
                gm /= c as f64;
                gy /= c as f64;
                for i in 0..c {
                    let gij = g.data()[i * t + j];
                    dx[i * t + j] += inv_std[j] * (gij - gm - y.data()[i * t + j] * gy);
                }
            }
        })
    }

    /// Mean over columns: `[C, T] → [C, 1]`.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, t) = (xv.rows(), xv.cols());
        let data = (0..c).map(|i| xv.row(i).iter().sum::<f64>() / t as f64).collect();
        self.custom(&[x], Tensor::column(data), move |g, _, gr| {
            let s = gr.slot(x);
            for i in 0..c {
                let gi = g.data()[i] / t as f64;
                for v in &mut s[i * t..(i + 1) * t] {
                    *v += gi;
                }
            }
        })
    }

    /// L2-normalises every column; `eps` guards the zero vector.
    pub fn l2_normalize_cols(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (c, t) = (xv.rows(), xv.cols());
        let norms: Vec<f64> = (0..t)
            .map(|j| ((0..c).map(|i| xv.at(i, j).powi(2)).sum::<f64>() + eps).sqrt())
            .collect();
        let mut out = xv.clone();
        for i in 0..c {
            for j in 0..t {
                out.data_mut()[i * t + j] /= norms[j];
            }
        }
        let me = self.nodes.len();
        self.custom(&[x], out, move |g, n, gr| {
            let y = &n[me].value;
            let dx = gr.slot(x);
            for j in 0..t {
                let dot: f64 = (0..c).map(|i| g.data()[i * t + j] * y.data()[i * t + j]).sum();
                for i in 0..c {
                    dx[i * t + j] += (g.data()[i * t + j] - y.data()[i * t + j] * dot) / norms[j];
                }
            }
        })
    }

    /// Row lookup into `table [V, D]`, producing channel-first `[D, T]`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let t = idx.len();
        let mut out = Tensor::zeros(&[d, t]);
        for (j, &k) in idx.iter().enumerate() {
            assert!(k < v, "embedding index {k} out of range {v}");
            for i in 0..d {
                out.data_mut()[i * t + j] = tv.at(k, i);
            }
        }
        let idx = idx.to_vec();
        self.custom(&[table], out, move |g, _, gr| {
            let s = gr.slot(table);
            for (j, &k) in idx.iter().enumerate() {
                for i in 0..d {
                    s[k * d + i] += g.data()[i * t + j];
                }
            }
        })
    }

    // ---------------------------------------------------------------- reductions / losses

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.custom(&[x], Tensor::scalar(s), move |g, _, gr| {
            let gv = g.data()[0];
            for v in gr.slot(x) {
                *v += gv;
            }
        })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Softmax cross-entropy of a logit column `[K, 1]` against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let lv = self.value(logits).data().to_vec();
        let mx = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lv.iter().map(|v| (v - mx).exp()).sum();
        let loss = -(lv[label] - mx - z.ln());
        let probs: Vec<f64> = lv.iter().map(|v| (v - mx).exp() / z).collect();
        self.custom(&[logits], Tensor::scalar(loss), move |g, _, gr| {
            let gv = g.data()[0];
            let s = gr.slot(logits);
            for (k, p) in probs.iter().enumerate() {
                s[k] += gv * (p - if k == label { 1.0 } else { 0.0 });
            }
        })
    }
}

/// Output index range `[lo, hi)` for which `j + shift` lies in `[0, t)`.
fn valid_range(t: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (t as isize - shift).clamp(0, t as isize) as usize;
    (lo.min(hi), hi)
}
