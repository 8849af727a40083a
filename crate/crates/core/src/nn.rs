//! Learnable layers and the parameter store backing them.
//!
//! Parameters live outside any tape in a [`ParamStore`]; layers hold typed
//! [`PRef`] handles plus their hyperparameters. At the start of each forward
//! pass the whole store is bound into the tape once ([`ParamStore::bind`]),
//! and layer `forward` methods look their tensors up through the resulting
//! [`Bound`] table. After `backward`, gradients are read back in store order.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// A plain named tensor value: the storage form of weights, biases and
/// checkpoint records.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], c: f32) -> Self {
        let n = shape.iter().product();
        Param { shape: shape.to_vec(), data: vec![c; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PRef(usize);

/// Flat, ordered collection of named parameters. Order is construction order
/// and is the canonical order for optimizer state and gradient collection.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, param: Param) -> PRef {
        let id = PRef(self.params.len());
        self.names.push(name.into());
        self.params.push(param);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, p: PRef) -> &Param {
        &self.params[p.0]
    }

    pub fn get_mut(&mut self, p: PRef) -> &mut Param {
        &mut self.params[p.0]
    }

    pub fn name(&self, p: PRef) -> &str {
        &self.names[p.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names.iter().map(|n| n.as_str()).zip(self.params.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.names.iter().map(|n| n.as_str()).zip(self.params.iter_mut())
    }

    pub fn find(&self, name: &str) -> Option<PRef> {
        self.names.iter().position(|n| n == name).map(PRef)
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Insert every parameter into the tape as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let mut ids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            ids.push(tape.leaf(&p.shape, p.data.clone(), trainable)?);
        }
        Ok(Bound { ids })
    }

    /// Collect gradients in store order after a backward pass.
    pub fn grads<'t>(&self, tape: &'t Tape, bound: &Bound) -> Vec<&'t [f32]> {
        bound
            .ids
            .iter()
            .map(|&id| tape.grad(id).expect("backward fills every trainable leaf"))
            .collect()
    }
}

/// Tape ids of a bound [`ParamStore`], indexable by [`PRef`].
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    /// Assemble from externally created leaf ids (must follow store order).
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        Bound { ids }
    }

    pub fn id(&self, p: PRef) -> TensorId {
        self.ids[p.0]
    }
}

/// Weight initialization families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He normal, std = sqrt(2 / fan_in); for weights feeding a ReLU.
    HeNormal,
    /// Xavier uniform over ±sqrt(6 / (fan_in + fan_out)); for attention and
    /// MLP projections.
    XavierUniform,
    Zeros,
}

fn init_weight(param: &mut Param, init: Init, fan_in: usize, fan_out: usize, rng: &mut Rng) {
    match init {
        Init::HeNormal => {
            let std = (2.0 / fan_in as f64).sqrt() as f32;
            for v in &mut param.data {
                *v = rng.normal(0.0, std);
            }
        }
        Init::XavierUniform => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            for v in &mut param.data {
                *v = rng.uniform(-a, a);
            }
        }
        Init::Zeros => param.data.iter_mut().for_each(|v| *v = 0.0),
    }
}

// ── Layers ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: PRef,
    pub bias: PRef,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// 3x3 helper used by every VGG stage (stride 1, pad 1).
    pub fn new3x3(store: &mut ParamStore, prefix: &str, in_c: usize, out_c: usize, init: Init, rng: &mut Rng) -> Self {
        Conv2dLayer::new(store, prefix, in_c, out_c, 3, 3, 1, 1, init, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let mut w = Param::zeros(&[out_c, in_c, kh, kw]);
        init_weight(&mut w, init, in_c * kh * kw, out_c * kh * kw, rng);
        let weight = store.add(format!("{prefix}.weight"), w);
        let bias = store.add(format!("{prefix}.bias"), Param::zeros(&[out_c]));
        Conv2dLayer { weight, bias, stride, padding }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: TensorId) -> Result<TensorId> {
        tape.conv2d(x, bound.id(self.weight), bound.id(self.bias), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: PRef,
    pub bias: PRef,
}

impl LinearLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, init: Init, rng: &mut Rng) -> Self {
        let mut w = Param::zeros(&[out_dim, in_dim]);
        init_weight(&mut w, init, in_dim, out_dim, rng);
        let weight = store.add(format!("{prefix}.weight"), w);
        let bias = store.add(format!("{prefix}.bias"), Param::zeros(&[out_dim]));
        LinearLayer { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: TensorId) -> Result<TensorId> {
        tape.linear(x, bound.id(self.weight), bound.id(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gamma: PRef,
    pub beta: PRef,
    pub eps: f32,
}

impl LayerNormLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Param::filled(&[dim], 1.0));
        let beta = store.add(format!("{prefix}.beta"), Param::zeros(&[dim]));
        LayerNormLayer { gamma, beta, eps: 1e-5 }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: TensorId) -> Result<TensorId> {
        tape.layer_norm(x, bound.id(self.gamma), bound.id(self.beta), self.eps)
    }
}
