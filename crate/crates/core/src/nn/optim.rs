use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;

/// Cosine decay from `base` at step 0 to `base · floor` at `total`.
pub fn cosine_lr(base: f64, floor: f64, step: usize, total: usize) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Adam with global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[(String, Tensor)]) -> f64 {
        let norm = grads
            .iter()
            .map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            if !params.is_trainable(name) {
                continue;
            }
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter '{name}'"));
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * clip;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }

    /// Optimizer state as named tensors (for checkpoint resume).
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        for (n, (m, v)) in &self.moments {
            out.push((format!("adam.m.{n}"), m.clone()));
            out.push((format!("adam.v.{n}"), v.clone()));
        }
        out
    }

    pub fn restore(&mut self, tensors: &BTreeMap<String, Tensor>) {
        self.moments.clear();
        if let Some(s) = tensors.get("adam.step") {
            self.step = s.data()[0] as u64;
        }
        for (n, m) in tensors {
            if let Some(name) = n.strip_prefix("adam.m.") {
                if let Some(v) = tensors.get(&format!("adam.v.{name}")) {
                    self.moments.insert(name.to_string(), (m.clone(), v.clone()));
                }
            }
        }
    }
}

/// Sums per-example gradients in input order and scales by `1/n`.
pub fn average_grads(per_example: Vec<Vec<(String, Tensor)>>) -> Vec<(String, Tensor)> {
    let n = per_example.len().max(1) as f64;
    let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
    for grads in per_example {
        for (name, g) in grads {
            match acc.get_mut(&name) {
                Some(a) => a.add_assign(&g),
                None => {
                    acc.insert(name, g);
                }
            }
        }
    }
    acc.into_iter()
        .map(|(k, mut v)| {
            v.scale_assign(1.0 / n);
            (k, v)
        })
        .collect()
}
