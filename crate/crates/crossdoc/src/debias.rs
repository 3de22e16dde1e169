//! Prediction debiasing: an auxiliary non-NA classifier distribution, an
//! importance-masked subgraph distribution, and the linear calibration
//! `y + lambda * (y_rela - y_bias)` applied at inference only.
//!
//! A disabled component falls back to the original distribution `y`, so every
//! disabled combination degrades exactly to the uncalibrated model.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::DebiasConfig;
use crate::data::DocumentBag;
use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::head::{AttentionTrace, ScoreVector};
use crate::model::{BagEval, Model};
use crate::nn::{Binder, Mlp};
use crate::tape::{Tape, VarId};

/// Classifier over the non-NA labels only, stacked on the frozen backbone.
/// Output width is `label_space.size - 1`; index `i` scores relation `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxClassifier {
    pub mlp: Mlp,
}

impl AuxClassifier {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, label_count: usize) -> Self {
        assert!(label_count >= 2);
        AuxClassifier {
            mlp: Mlp::init(rng, dim, dim, label_count - 1),
        }
    }

    pub fn output_width(&self) -> usize {
        self.mlp.l2.w.ncols()
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        self.mlp.visit("aux", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        self.mlp.visit_mut("aux", out);
    }

    /// Tape forward for training: logits over the non-NA labels.
    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, r_k: VarId) -> VarId {
        self.mlp.forward(tape, binder, "aux", r_k)
    }

    /// Value-level logits for inference.
    pub fn logits_values(&self, r_k: &[f64]) -> Vec<f64> {
        let d = r_k.len();
        let hidden: Vec<f64> = (0..self.mlp.l1.w.ncols())
            .map(|o| {
                let mut acc = self.mlp.l1.b[[0, o]];
                for k in 0..d {
                    acc += r_k[k] * self.mlp.l1.w[[k, o]];
                }
                acc.max(0.0)
            })
            .collect();
        (0..self.output_width())
            .map(|o| {
                let mut acc = self.mlp.l2.b[[0, o]];
                for (k, h) in hidden.iter().enumerate() {
                    acc += h * self.mlp.l2.w[[k, o]];
                }
                acc
            })
            .collect()
    }
}

/// Importance of each non-target node: the average attention mass that
/// target-involving query cells assign to cells involving the node, taken
/// over every layer, head, and qualifying query.
pub fn compute_importance(trace: &AttentionTrace, graph: &EntityGraph) -> BTreeMap<usize, f64> {
    let n = graph.node_count();
    let non_targets = graph.non_target_ids();
    if non_targets.is_empty() {
        return BTreeMap::new();
    }
    let is_target: Vec<bool> = graph.nodes.iter().map(|nd| nd.role.is_target()).collect();
    let query_cells: Vec<usize> = (0..n * n)
        .filter(|c| is_target[c / n] || is_target[c % n])
        .collect();

    let mut totals: BTreeMap<usize, f64> = non_targets.iter().map(|&v| (v, 0.0)).collect();
    let mut samples = 0usize;
    for layer in &trace.layers {
        for weights in layer {
            debug_assert_eq!(weights.dim(), (n * n, n * n));
            for &q in &query_cells {
                samples += 1;
                for key in 0..n * n {
                    let (p, r) = (key / n, key % n);
                    let w = weights[[q, key]];
                    if let Some(t) = totals.get_mut(&p) {
                        *t += w;
                    }
                    if r != p {
                        if let Some(t) = totals.get_mut(&r) {
                            *t += w;
                        }
                    }
                }
            }
        }
    }
    if samples > 0 {
        for t in totals.values_mut() {
            *t /= samples as f64;
        }
    }
    totals
}

/// Remove the `ceil(mask_rate * count)` most important non-target nodes and
/// every incident edge. Score ties mask the lower node id first; target
/// nodes are never removed.
pub fn mask_top(
    graph: &EntityGraph,
    scores: &BTreeMap<usize, f64>,
    mask_rate: f64,
) -> EntityGraph {
    let non_targets = graph.non_target_ids();
    let to_mask = (mask_rate * non_targets.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = non_targets.clone();
    order.sort_by(|&a, &b| {
        let sa = scores.get(&a).copied().unwrap_or(0.0);
        let sb = scores.get(&b).copied().unwrap_or(0.0);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let masked: BTreeSet<usize> = order.into_iter().take(to_mask).collect();
    let keep: BTreeSet<usize> = (0..graph.node_count())
        .filter(|i| !masked.contains(i))
        .collect();
    graph.subgraph_keeping(&keep)
}

/// Linear score calibration. The output is a ranking score vector and is not
/// renormalized.
pub fn calibrate(
    y: &ScoreVector,
    y_rela: &ScoreVector,
    y_bias: &ScoreVector,
    lambda: f64,
) -> ScoreVector {
    assert_eq!(y.len(), y_rela.len());
    assert_eq!(y.len(), y_bias.len());
    ScoreVector(
        y.0.iter()
            .zip(&y_rela.0)
            .zip(&y_bias.0)
            .map(|((&y, &r), &b)| y + lambda * (r - b))
            .collect(),
    )
}

/// The masked-subgraph distribution: importance from the unmasked pass, then
/// the same parameters over the remaining subgraph.
pub fn predict_bias(model: &Model, eval: &BagEval, mask_rate: f64) -> Result<ScoreVector> {
    let importance = compute_importance(&eval.trace, &eval.graph);
    let masked = mask_top(&eval.graph, &importance, mask_rate);
    let (scores, _) = model.forward_subgraph(&masked)?;
    Ok(scores)
}

/// The auxiliary distribution: per-path non-NA logits, pooled componentwise,
/// softmaxed, and embedded into the full label space with NA fixed at 0.
pub fn predict_rela(eval: &BagEval, aux: &AuxClassifier) -> ScoreVector {
    let width = aux.output_width();
    let mut pooled = vec![f64::NEG_INFINITY; width];
    for r_k in &eval.path_reprs {
        let logits = aux.logits_values(r_k);
        for (p, l) in pooled.iter_mut().zip(logits) {
            *p = p.max(l);
        }
    }
    let max = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = pooled.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut out = vec![0.0; width + 1];
    for (i, e) in exps.into_iter().enumerate() {
        out[i + 1] = e / total;
    }
    ScoreVector(out)
}

/// One bag's raw, component, and calibrated distributions.
#[derive(Debug, Clone)]
pub struct BagPrediction {
    pub raw: ScoreVector,
    pub rela: Option<ScoreVector>,
    pub bias: Option<ScoreVector>,
    pub calibrated: ScoreVector,
}

/// Full inference for one bag under the model's debias configuration.
pub fn predict_bag(model: &Model, bag: &DocumentBag) -> Result<BagPrediction> {
    let eval = model.evaluate_bag(bag)?;
    predict_from_eval(model, &eval)
}

/// Same as [`predict_bag`] when the unmasked evaluation is already at hand.
pub fn predict_from_eval(model: &Model, eval: &BagEval) -> Result<BagPrediction> {
    let cfg: &DebiasConfig = &model.config.debias;
    let raw = eval.scores.clone();
    if !cfg.enabled {
        return Ok(BagPrediction {
            calibrated: raw.clone(),
            raw,
            rela: None,
            bias: None,
        });
    }
    let rela = if cfg.use_rela {
        let aux = model.aux.as_ref().ok_or_else(|| {
            Error::Config(
                "debias.use_rela needs a trained auxiliary classifier; run the second training phase or disable it".into(),
            )
        })?;
        Some(predict_rela(eval, aux))
    } else {
        None
    };
    let bias = if cfg.use_bias {
        Some(predict_bias(model, eval, cfg.mask_rate)?)
    } else {
        None
    };
    let calibrated = calibrate(
        &raw,
        rela.as_ref().unwrap_or(&raw),
        bias.as_ref().unwrap_or(&raw),
        cfg.lambda,
    );
    Ok(BagPrediction {
        raw,
        rela,
        bias,
        calibrated,
    })
}
