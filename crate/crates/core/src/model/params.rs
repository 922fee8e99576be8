//! Parameter containers and initialisation.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AdnnConfig;
use crate::features::Channel;

/// One LSTM direction. Gate blocks are laid out `[input, forget, cell, output]`
/// along the `4·hidden` axis; activations are computed as
/// `x·w_x + h·w_h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl Lstm {
    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input_width(&self) -> usize {
        self.w_x.nrows()
    }

    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        Lstm {
            w_x: glorot(rng, input, 4 * hidden),
            w_h: glorot(rng, hidden, 4 * hidden),
            b,
        }
    }
}

/// Additive attention: scores `s_t = v · tanh(W h_t)`, weights
/// `softmax(s)`, context `Σ_t α_t h_t`. `w` is `attention_dim × input width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w: Array2<f64>,
    pub v: Array1<f64>,
}

impl Attention {
    pub fn input_width(&self) -> usize {
        self.w.ncols()
    }

    fn init(rng: &mut ChaCha8Rng, dim: usize, input: usize) -> Self {
        let limit = (6.0 / (dim + 1) as f64).sqrt();
        Attention {
            w: glorot(rng, dim, input),
            v: Array1::from_shape_fn(dim, |_| rng.random_range(-limit..limit)),
        }
    }
}

/// BiLSTM followed by additive attention over its output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentBranch {
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub attn: Attention,
}

impl RecurrentBranch {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, attention_dim: usize) -> Self {
        RecurrentBranch {
            fwd: Lstm::init(rng, input, hidden),
            bwd: Lstm::init(rng, input, hidden),
            attn: Attention::init(rng, attention_dim, 2 * hidden),
        }
    }
}

/// Dense softmax output layer; `w` is `n_classes × fused width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Widths of the per-channel inputs a model was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputDims {
    pub meta: usize,
    pub linguistic: usize,
    pub embedding: usize,
}

impl InputDims {
    pub fn of(self, channel: Channel) -> usize {
        match channel {
            Channel::Meta => self.meta,
            Channel::Linguistic => self.linguistic,
            Channel::Embedding => self.embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdnnParams {
    pub meta: Option<RecurrentBranch>,
    pub linguistic: Option<RecurrentBranch>,
    pub embedding: Option<Attention>,
    pub head: Head,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl AdnnParams {
    pub fn init(config: &AdnnConfig, dims: InputDims, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_units;
        let a = config.attention_dim;
        let meta = config
            .channels
            .contains(Channel::Meta)
            .then(|| RecurrentBranch::init(rng, dims.meta, h, a));
        let linguistic = config
            .channels
            .contains(Channel::Linguistic)
            .then(|| RecurrentBranch::init(rng, dims.linguistic, h, a));
        let embedding = config
            .channels
            .contains(Channel::Embedding)
            .then(|| Attention::init(rng, a, dims.embedding));
        let fused = fused_width(config, dims);
        AdnnParams {
            meta,
            linguistic,
            embedding,
            head: Head {
                w: glorot(rng, config.n_classes, fused),
                b: Array1::zeros(config.n_classes),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// All tensors with dotted names, in a fixed canonical order.
    pub fn named(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (prefix, b) in [("meta", &self.meta), ("linguistic", &self.linguistic)] {
            if let Some(b) = b {
                for (dir, l) in [("fwd", &b.fwd), ("bwd", &b.bwd)] {
                    out.push((format!("{prefix}.{dir}.w_x"), l.w_x.view().into_dyn()));
                    out.push((format!("{prefix}.{dir}.w_h"), l.w_h.view().into_dyn()));
                    out.push((format!("{prefix}.{dir}.b"), l.b.view().into_dyn()));
                }
                out.push((format!("{prefix}.attn.w"), b.attn.w.view().into_dyn()));
                out.push((format!("{prefix}.attn.v"), b.attn.v.view().into_dyn()));
            }
        }
        if let Some(a) = &self.embedding {
            out.push(("bert.attn.w".into(), a.w.view().into_dyn()));
            out.push(("bert.attn.v".into(), a.v.view().into_dyn()));
        }
        out.push(("head.w".into(), self.head.w.view().into_dyn()));
        out.push(("head.b".into(), self.head.b.view().into_dyn()));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (prefix, b) in [("meta", &mut self.meta), ("linguistic", &mut self.linguistic)] {
            if let Some(b) = b {
                for (dir, l) in [("fwd", &mut b.fwd), ("bwd", &mut b.bwd)] {
                    out.push((format!("{prefix}.{dir}.w_x"), l.w_x.view_mut().into_dyn()));
                    out.push((format!("{prefix}.{dir}.w_h"), l.w_h.view_mut().into_dyn()));
                    out.push((format!("{prefix}.{dir}.b"), l.b.view_mut().into_dyn()));
                }
                out.push((format!("{prefix}.attn.w"), b.attn.w.view_mut().into_dyn()));
                out.push((format!("{prefix}.attn.v"), b.attn.v.view_mut().into_dyn()));
            }
        }
        if let Some(a) = &mut self.embedding {
            out.push(("bert.attn.w".into(), a.w.view_mut().into_dyn()));
            out.push(("bert.attn.v".into(), a.v.view_mut().into_dyn()));
        }
        out.push(("head.w".into(), self.head.w.view_mut().into_dyn()));
        out.push(("head.b".into(), self.head.b.view_mut().into_dyn()));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut ArrayViewMutD<'_, f64>)) {
        for (name, mut t) in self.named_mut() {
            f(&name, &mut t);
        }
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the
    /// on-disk weight files.
    pub fn round_to_f32(&mut self) {
        self.for_each_mut(|_, t| t.mapv_inplace(|v| v as f32 as f64));
    }

    /// Parameter-group name of a tensor: the prefix before the first dot.
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}

/// Width of the fused context vector.
pub fn fused_width(config: &AdnnConfig, dims: InputDims) -> usize {
    config
        .channels
        .channels()
        .map(|c| match c {
            Channel::Meta | Channel::Linguistic => 2 * config.hidden_units,
            Channel::Embedding => dims.embedding,
        })
        .sum()
}
