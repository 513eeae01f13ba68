//! Minimal double-precision neural-network toolkit: tensors, a reverse-mode
//! tape, named parameter stores, Adam, and a finite-difference checker.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{BackFn, Grads, Graph, Node, Var};
pub use optim::{average_grads, cosine_lr, Adam};
pub use params::ParamStore;
pub use tensor::{matmul_acc as matmul_into, Tensor};

/// `prefix.w * x + prefix.b` for a kernel stored under `prefix`.
pub fn conv(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var, dilation: usize) -> Var {
    let w = g.param(p, &format!("{prefix}.w"));
    let b = g.param(p, &format!("{prefix}.b"));
    g.conv1d(x, w, Some(b), dilation)
}

pub fn conv_transpose(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var, stride: usize) -> Var {
    let w = g.param(p, &format!("{prefix}.w"));
    let b = g.param(p, &format!("{prefix}.b"));
    g.conv_transpose1d(x, w, Some(b), stride)
}

/// Dense layer applied column-wise: `W [out, in] · x [in, T] + b`.
pub fn linear(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Var {
    let w = g.param(p, &format!("{prefix}.w"));
    let b = g.param(p, &format!("{prefix}.b"));
    let y = g.matmul(w, x);
    g.add_col(y, b)
}

/// Central finite-difference check of `loss` w.r.t. every trainable scalar
/// in `params`. Returns the worst relative error
/// `|analytic − numeric| / max(|analytic| + |numeric|, floor)`.
pub fn finite_difference_check(
    params: &ParamStore,
    h: f64,
    floor: f64,
    loss: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let l = loss(&mut g, params);
    let grads = g.backward(l);
    let analytic: std::collections::BTreeMap<String, Tensor> =
        g.param_grads(&grads).into_iter().collect();

    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(&mut g, p);
        g.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        if !params.is_trainable(&name) {
            continue;
        }
        let n = params.get(&name).map(Tensor::len).unwrap_or(0);
        for i in 0..n {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&probe);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}
