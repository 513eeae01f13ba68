use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::tensor::Tensor;

/// Named parameter tensors. Iteration order is the lexical name order, which
/// keeps serialization and optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Marks every parameter whose name starts with `prefix` as frozen; the
    /// graph then treats it as a constant.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .tensors
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        self.frozen.extend(names);
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    /// Merges another store in, keeping `other`'s frozen flags.
    pub fn extend(&mut self, other: ParamStore) {
        self.frozen.extend(other.frozen);
        self.tensors.extend(other.tensors);
    }

    /// Subset of parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (n, t) in self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n.clone(), t.clone());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    // ---- initialisers

    /// Uniform `±1/√fan_in` init for a conv kernel `[out, in, k]` and bias.
    pub fn init_conv<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        cout: usize,
        cin: usize,
        k: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::uniform(&[cout, cin, k], bound, rng));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[cout, 1]));
    }

    /// Transposed-conv kernel `[in, out, k]` and bias.
    pub fn init_conv_transpose<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / ((cin * k) as f64 / 2.0).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::uniform(&[cin, cout, k], bound, rng));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[cout, 1]));
    }

    /// Dense layer `W [out, in]` and bias `[out, 1]`.
    pub fn init_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        dout: usize,
        din: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (din as f64).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::uniform(&[dout, din], bound, rng));
        self.insert(format!("{prefix}.b"), Tensor::zeros(&[dout, 1]));
    }

    pub fn zero_init(&mut self, prefix: &str) {
        for (n, t) in self.tensors.iter_mut() {
            if n.starts_with(prefix) {
                *t = Tensor::zeros(t.shape());
            }
        }
    }
}
