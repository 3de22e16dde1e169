//! Relation head: pairwise relation matrix over graph nodes, cross-path
//! self-attention over the flattened cells, per-path classification, and
//! bag-level pooling.
//!
//! Cell `(i, j)` of the relation matrix is
//! `ReLU(W(ReLU(W_u e_i + W_v e_j)))`, computed for every node pair. The
//! flattened `|V|^2` cell sequence gets learned (row role, column role)
//! embeddings — no absolute positions — and runs through a transformer
//! stack whose attention weights are kept for the importance analysis. The
//! relation representation of path `k` is the attended cell at
//! `(TargetHead(k), TargetTail(k))`.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityGraph, NodeRole, ROLE_CATEGORIES};
use crate::nn::{glorot, Binder, Mlp, TransformerLayer};
use crate::tape::{Tape, VarId};

/// Per-relation scores. Straight out of the classifier these are softmax
/// probabilities; after bag pooling or calibration they are ranking scores
/// and need not lie on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Score of the NA relation (index 0).
    pub fn na(&self) -> f64 {
        self.0[0]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.0.len() {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Post-softmax attention weights: `layers[l][h]` is the `[L, L]` weight
/// matrix of head `h` in layer `l`, rows indexed by query cell.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Array2<f64>>>,
}

/// Relation-head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationHead {
    /// Eq-style pair map: `w_u`/`w_v` mix the two node states, `w` projects
    /// the mixed vector. No biases.
    pub w_u: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w: Array2<f64>,
    /// Learned embeddings for the 16 (row role, column role) combinations.
    pub role_embed: Array2<f64>,
    pub layers: Vec<TransformerLayer>,
    pub classifier: Mlp,
}

impl RelationHead {
    pub fn init(
        rng: &mut ChaCha8Rng,
        dim: usize,
        attn_layers: usize,
        attn_heads: usize,
        label_count: usize,
    ) -> Self {
        RelationHead {
            w_u: glorot(rng, dim, dim),
            w_v: glorot(rng, dim, dim),
            w: glorot(rng, dim, dim),
            role_embed: glorot(rng, ROLE_CATEGORIES * ROLE_CATEGORIES, dim),
            layers: (0..attn_layers)
                .map(|_| TransformerLayer::init(rng, dim, attn_heads))
                .collect(),
            classifier: Mlp::init(rng, dim, dim, label_count),
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push(("head.w_u".into(), &self.w_u));
        out.push(("head.w_v".into(), &self.w_v));
        out.push(("head.w".into(), &self.w));
        out.push(("head.role_embed".into(), &self.role_embed));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("head.attn{i}"), out);
        }
        self.classifier.visit("head.cls", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push(("head.w_u".into(), &mut self.w_u));
        out.push(("head.w_v".into(), &mut self.w_v));
        out.push(("head.w".into(), &mut self.w));
        out.push(("head.role_embed".into(), &mut self.role_embed));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("head.attn{i}"), out);
        }
        self.classifier.visit_mut("head.cls", out);
    }

    /// All `|V|^2` pair representations, flattened row-major: cell `(i, j)`
    /// is row `i * |V| + j`.
    pub fn relation_matrix(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        states: VarId,
    ) -> VarId {
        let n = tape.value(states).nrows();
        let wu = binder.bind(tape, "head.w_u", &self.w_u);
        let wv = binder.bind(tape, "head.w_v", &self.w_v);
        let w = binder.bind(tape, "head.w", &self.w);
        let u = tape.matmul(states, wu);
        let v = tape.matmul(states, wv);
        let rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(n)).collect();
        let cols: Vec<usize> = (0..n).flat_map(|_| 0..n).collect();
        let ui = tape.select_rows(u, &rows);
        let vj = tape.select_rows(v, &cols);
        let mixed = tape.add(ui, vj);
        let inner = tape.relu(mixed);
        let projected = tape.matmul(inner, w);
        tape.relu(projected)
    }

    /// Add the (row role, column role) embedding to every cell.
    pub fn add_role_embeddings(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        cells: VarId,
        graph: &EntityGraph,
    ) -> VarId {
        let n = graph.node_count();
        let table = binder.bind(tape, "head.role_embed", &self.role_embed);
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| (i, j))
            })
            .map(|(i, j)| {
                graph.nodes[i].role.category() * ROLE_CATEGORIES + graph.nodes[j].role.category()
            })
            .collect();
        let emb = tape.select_rows(table, &idx);
        tape.add(cells, emb)
    }

    /// Self-attention over the flattened cells; returns the attended cells
    /// and the full per-layer, per-head attention weights.
    pub fn cross_path_attend(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        cells: VarId,
        attn_budget: usize,
    ) -> Result<(VarId, AttentionTrace)> {
        let count = tape.value(cells).nrows();
        if count > attn_budget {
            return Err(Error::AttentionBudget {
                cells: count,
                budget: attn_budget,
            });
        }
        let mut trace = AttentionTrace::default();
        let mut h = cells;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut weights = Vec::new();
            h = layer.forward(tape, binder, &format!("head.attn{i}"), h, Some(&mut weights));
            trace.layers.push(weights);
        }
        Ok((h, trace))
    }

    /// The relation representation of path `k`: the attended cell at
    /// `(TargetHead(k), TargetTail(k))`.
    pub fn path_relation_repr(
        &self,
        tape: &mut Tape,
        attended: VarId,
        graph: &EntityGraph,
        k: usize,
    ) -> Result<VarId> {
        let n = graph.node_count();
        let head = graph.target_head(k).ok_or_else(|| {
            Error::Argument(format!("graph has no head target node for path {k}"))
        })?;
        let tail = graph.target_tail(k).ok_or_else(|| {
            Error::Argument(format!("graph has no tail target node for path {k}"))
        })?;
        Ok(tape.select_rows(attended, &[head * n + tail]))
    }

    /// Two-layer MLP with ReLU, then softmax over the label space.
    pub fn classify_path(&self, tape: &mut Tape, binder: &mut Binder, r_k: VarId) -> VarId {
        let logits = self.classifier.forward(tape, binder, "head.cls", r_k);
        tape.softmax_rows(logits)
    }
}

/// Bag pooling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Per-class max over the path score vectors.
    ComponentwiseMax,
    /// The whole vector of the path with the largest non-NA mass.
    BestPath,
}

impl PoolMode {
    pub fn parse(name: &str) -> Result<PoolMode> {
        match name {
            "componentwise_max" => Ok(PoolMode::ComponentwiseMax),
            "best_path" => Ok(PoolMode::BestPath),
            other => Err(Error::Config(format!("unknown pool mode {other:?}"))),
        }
    }
}

/// Pool per-path score vectors into the bag-level vector on the tape.
pub fn bag_pool(tape: &mut Tape, path_scores: &[VarId], mode: PoolMode) -> Result<VarId> {
    if path_scores.is_empty() {
        return Err(Error::Argument("bag pooling needs at least one path".into()));
    }
    match mode {
        PoolMode::ComponentwiseMax => {
            let stacked = tape.concat_rows(path_scores);
            Ok(tape.max_cols(stacked))
        }
        PoolMode::BestPath => {
            let best = path_scores
                .iter()
                .enumerate()
                .map(|(k, &v)| (k, 1.0 - tape.value(v)[[0, 0]]))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(k, _)| k)
                .unwrap();
            Ok(path_scores[best])
        }
    }
}

/// Componentwise-max pooling on plain values.
pub fn bag_pool_values(path_scores: &[ScoreVector]) -> Result<ScoreVector> {
    if path_scores.is_empty() {
        return Err(Error::Argument("bag pooling needs at least one path".into()));
    }
    let len = path_scores[0].len();
    let mut out = vec![f64::NEG_INFINITY; len];
    for s in path_scores {
        assert_eq!(s.len(), len, "mismatched score vector lengths");
        for (o, &v) in out.iter_mut().zip(&s.0) {
            *o = o.max(v);
        }
    }
    Ok(ScoreVector(out))
}

/// Single-pair relation representation on plain values.
pub fn pair_repr_values(e_i: &[f64], e_j: &[f64], head: &RelationHead) -> Vec<f64> {
    let d = e_i.len();
    let mut mixed = vec![0.0; d];
    for out in 0..d {
        let mut acc = 0.0;
        for k in 0..d {
            acc += e_i[k] * head.w_u[[k, out]] + e_j[k] * head.w_v[[k, out]];
        }
        mixed[out] = acc.max(0.0);
    }
    (0..d)
        .map(|out| {
            let mut acc = 0.0;
            for k in 0..d {
                acc += mixed[k] * head.w[[k, out]];
            }
            acc.max(0.0)
        })
        .collect()
}
