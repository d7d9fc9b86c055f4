//! Dense layers over the tape.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => t.relu(x),
            Activation::Gelu => t.gelu(x),
            Activation::Tanh => t.tanh(x),
        }
    }
}

/// `x W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inp: usize, out: usize) -> Self {
        let w = store.add(format!("{name}.w"), ParamStore::glorot(rng, inp, out));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, out)));
        Self { w, b }
    }

    /// Looks up `{name}.w` / `{name}.b` in an existing store.
    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self { w: store.id(&format!("{name}.w"))?, b: store.id(&format!("{name}.b"))? })
    }

    pub fn forward<'s>(&self, t: &mut Tape<'s>, store: &'s ParamStore, x: Var) -> Var {
        let w = t.param(store, self.w);
        let b = t.param(store, self.b);
        let xw = t.matmul(x, w);
        t.add(xw, b)
    }

    pub fn in_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).nrows()
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w).ncols()
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Array2::ones((1, dim)));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, dim)));
        Self { gain, bias }
    }

    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self { gain: store.id(&format!("{name}.gain"))?, bias: store.id(&format!("{name}.bias"))? })
    }

    pub fn forward<'s>(&self, t: &mut Tape<'s>, store: &'s ParamStore, x: Var) -> Var {
        let n = t.layer_norm(x, 1e-5);
        let g = t.param(store, self.gain);
        let b = t.param(store, self.bias);
        let y = t.mul(n, g);
        t.add(y, b)
    }
}

/// Stack of linear layers with an activation between them (none after the
/// last one).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: &[usize], activation: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, rng, &format!("{name}.{k}"), w[0], w[1]))
            .collect();
        Self { layers, activation }
    }

    pub fn find(store: &ParamStore, name: &str, depth: usize, activation: Activation) -> Option<Self> {
        let layers = (0..depth).map(|k| Linear::find(store, &format!("{name}.{k}"))).collect::<Option<_>>()?;
        Some(Self { layers, activation })
    }

    pub fn forward<'s>(&self, t: &mut Tape<'s>, store: &'s ParamStore, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(t, store, x);
            if k < last {
                x = self.activation.apply(t, x);
            }
        }
        x
    }
}
