//! Parameter containers, layers, and the optimizer.
//!
//! Parameters are plain `f64` matrices held outside the tape. Each forward
//! pass registers them through a [`Binder`], which hands back the same tape
//! variable when a parameter is bound twice (shared weights accumulate
//! gradients correctly, e.g. a recurrent cell applied at every timestep).

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Tape, VarId};

/// Records parameter-name-to-variable bindings for one forward pass.
#[derive(Default)]
pub struct Binder {
    map: BTreeMap<String, VarId>,
}

impl Binder {
    pub fn new() -> Self {
        Binder::default()
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str, value: &Array2<f64>) -> VarId {
        if let Some(&id) = self.map.get(name) {
            return id;
        }
        let id = tape.leaf(value.clone());
        self.map.insert(name.to_string(), id);
        id
    }

    /// Extract per-parameter gradients after a backward pass. Parameters the
    /// loss never touched get zeros.
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Array2<f64>> {
        self.map
            .iter()
            .map(|(name, &id)| (name.clone(), grads.wrt(id, tape.value(id))))
            .collect()
    }
}

pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Affine map `x * w + b` with `w: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn init(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Self {
        Linear {
            w: glorot(rng, inp, out),
            b: Array2::zeros((1, out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, x: VarId) -> VarId {
        let w = binder.bind(tape, &format!("{prefix}.w"), &self.w);
        let b = binder.bind(tape, &format!("{prefix}.b"), &self.b);
        let mm = tape.matmul(x, w);
        tape.add_row(mm, b)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn init(dim: usize) -> Self {
        LayerNorm {
            gamma: Array2::ones((1, dim)),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, x: VarId) -> VarId {
        let g = binder.bind(tape, &format!("{prefix}.gamma"), &self.gamma);
        let b = binder.bind(tape, &format!("{prefix}.beta"), &self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

/// One attention head: query/key/value projections to `head_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
}

impl AttentionHead {
    pub fn init(rng: &mut ChaCha8Rng, model_dim: usize, head_dim: usize) -> Self {
        AttentionHead {
            wq: Linear::init(rng, model_dim, head_dim),
            wk: Linear::init(rng, model_dim, head_dim),
            wv: Linear::init(rng, model_dim, head_dim),
        }
    }
}

/// Multi-head self-attention with an output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn init(rng: &mut ChaCha8Rng, model_dim: usize, n_heads: usize) -> Self {
        assert!(n_heads > 0 && model_dim % n_heads == 0);
        let head_dim = model_dim / n_heads;
        MultiHeadAttention {
            heads: (0..n_heads)
                .map(|_| AttentionHead::init(rng, model_dim, head_dim))
                .collect(),
            wo: Linear::init(rng, model_dim, model_dim),
        }
    }

    /// Self-attention over the rows of `x` (`[L, d]`). When `trace` is given,
    /// the post-softmax weight matrix of every head (`[L, L]`, rows = queries)
    /// is appended to it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        x: VarId,
        trace: Option<&mut Vec<Array2<f64>>>,
    ) -> VarId {
        let head_dim = self.heads[0].wq.w.ncols();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for (h, head) in self.heads.iter().enumerate() {
            let q = head.wq.forward(tape, binder, &format!("{prefix}.h{h}.wq"), x);
            let k = head.wk.forward(tape, binder, &format!("{prefix}.h{h}.wk"), x);
            let v = head.wv.forward(tape, binder, &format!("{prefix}.h{h}.wv"), x);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            weights.push(tape.value(attn).clone());
            outputs.push(tape.matmul(attn, v));
        }
        if let Some(trace) = trace {
            trace.extend(weights);
        }
        let cat = tape.concat_cols(&outputs);
        self.wo.forward(tape, binder, &format!("{prefix}.wo"), cat)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        for (h, head) in self.heads.iter().enumerate() {
            head.wq.visit(&format!("{prefix}.h{h}.wq"), out);
            head.wk.visit(&format!("{prefix}.h{h}.wk"), out);
            head.wv.visit(&format!("{prefix}.h{h}.wv"), out);
        }
        self.wo.visit(&format!("{prefix}.wo"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        for (h, head) in self.heads.iter_mut().enumerate() {
            head.wq.visit_mut(&format!("{prefix}.h{h}.wq"), out);
            head.wk.visit_mut(&format!("{prefix}.h{h}.wk"), out);
            head.wv.visit_mut(&format!("{prefix}.h{h}.wv"), out);
        }
        self.wo.visit_mut(&format!("{prefix}.wo"), out);
    }
}

/// Post-norm transformer encoder layer: attention and feed-forward sublayers,
/// each wrapped in a residual connection followed by layer normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

pub const FFN_MULT: usize = 4;

impl TransformerLayer {
    pub fn init(rng: &mut ChaCha8Rng, model_dim: usize, n_heads: usize) -> Self {
        TransformerLayer {
            attn: MultiHeadAttention::init(rng, model_dim, n_heads),
            ln1: LayerNorm::init(model_dim),
            ff1: Linear::init(rng, model_dim, FFN_MULT * model_dim),
            ff2: Linear::init(rng, FFN_MULT * model_dim, model_dim),
            ln2: LayerNorm::init(model_dim),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        x: VarId,
        trace: Option<&mut Vec<Array2<f64>>>,
    ) -> VarId {
        let attn_out = self
            .attn
            .forward(tape, binder, &format!("{prefix}.attn"), x, trace);
        let res1 = tape.add(x, attn_out);
        let h = self.ln1.forward(tape, binder, &format!("{prefix}.ln1"), res1);
        let f1 = self.ff1.forward(tape, binder, &format!("{prefix}.ff1"), h);
        let act = tape.relu(f1);
        let f2 = self.ff2.forward(tape, binder, &format!("{prefix}.ff2"), act);
        let res2 = tape.add(h, f2);
        self.ln2.forward(tape, binder, &format!("{prefix}.ln2"), res2)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        self.attn.visit(&format!("{prefix}.attn"), out);
        self.ln1.visit(&format!("{prefix}.ln1"), out);
        self.ff1.visit(&format!("{prefix}.ff1"), out);
        self.ff2.visit(&format!("{prefix}.ff2"), out);
        self.ln2.visit(&format!("{prefix}.ln2"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        self.attn.visit_mut(&format!("{prefix}.attn"), out);
        self.ln1.visit_mut(&format!("{prefix}.ln1"), out);
        self.ff1.visit_mut(&format!("{prefix}.ff1"), out);
        self.ff2.visit_mut(&format!("{prefix}.ff2"), out);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), out);
    }
}

/// Two-layer perceptron with a ReLU in between; emits logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn init(rng: &mut ChaCha8Rng, inp: usize, hidden: usize, out: usize) -> Self {
        Mlp {
            l1: Linear::init(rng, inp, hidden),
            l2: Linear::init(rng, hidden, out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, x: VarId) -> VarId {
        let h = self.l1.forward(tape, binder, &format!("{prefix}.l1"), x);
        let act = tape.relu(h);
        self.l2.forward(tape, binder, &format!("{prefix}.l2"), act)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        self.l1.visit(&format!("{prefix}.l1"), out);
        self.l2.visit(&format!("{prefix}.l2"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        self.l1.visit_mut(&format!("{prefix}.l1"), out);
        self.l2.visit_mut(&format!("{prefix}.l2"), out);
    }
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Array2<f64>>, max_norm: f64) -> f64 {
    let total: f64 = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && total > max_norm {
        let factor = max_norm / total;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }
    total
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update. Parameters without a gradient entry are skipped.
    pub fn step(
        &mut self,
        params: &mut Vec<(String, &mut Array2<f64>)>,
        grads: &BTreeMap<String, Array2<f64>>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, value) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            m.zip_mut_with(g, |me, &ge| *me = self.beta1 * *me + (1.0 - self.beta1) * ge);
            v.zip_mut_with(g, |ve, &ge| *ve = self.beta2 * *ve + (1.0 - self.beta2) * ge * ge);
            for ((p, &me), &ve) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = me / bc1;
                let vhat = ve / bc2;
                *p -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}
