//! The assembled model: encoder, graph construction, GRN, and relation head,
//! plus checkpoint serialization.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{DocumentBag, LabelSpace};
use crate::debias::AuxClassifier;
use crate::encoder::{assemble_path, EncoderBackend, SequenceEncoder, ToyEncoder, TransformerEncoder, Vocab};
use crate::error::{Error, Result};
use crate::graph::{build_edges, plan_nodes, EntityGraph, GraphNode, NodeRole};
use crate::grn::Grn;
use crate::head::{bag_pool, AttentionTrace, PoolMode, RelationHead, ScoreVector};
use crate::nn::Binder;
use crate::tape::{Tape, VarId};

pub struct Model {
    pub config: RunConfig,
    pub label_space: LabelSpace,
    pub encoder: EncoderBackend,
    pub grn: Grn,
    pub head: RelationHead,
    pub aux: Option<AuxClassifier>,
}

/// Everything produced by one differentiable forward pass over a bag.
pub struct ForwardPass {
    /// Bag-level pooled scores, `[1, S]`.
    pub bag_scores: VarId,
    /// Per-path post-softmax scores.
    pub path_scores: Vec<VarId>,
    /// Per-path relation representations `r^k`.
    pub path_reprs: Vec<VarId>,
    pub graph: EntityGraph,
    pub trace: AttentionTrace,
}

/// Value-level outputs of an inference pass.
#[derive(Debug, Clone)]
pub struct BagEval {
    pub scores: ScoreVector,
    pub path_scores: Vec<ScoreVector>,
    pub path_reprs: Vec<Vec<f64>>,
    pub graph: EntityGraph,
    pub trace: AttentionTrace,
}

impl Model {
    /// Fresh model from the configuration. The vocabulary comes from the
    /// training data (or a loaded encoder checkpoint for the pretrained
    /// kind).
    pub fn init(config: &RunConfig, label_space: &LabelSpace, vocab: Vocab) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let dim = config.encoder.hidden_dim;
        let encoder = match config.encoder.kind.as_str() {
            "toy" => EncoderBackend::Toy(ToyEncoder::init(&mut rng, vocab, dim)?),
            "pretrained" => match &config.encoder.checkpoint {
                Some(path) => {
                    let enc = TransformerEncoder::load(Path::new(path))?;
                    if enc.hidden_dim() != dim {
                        return Err(Error::Config(format!(
                            "encoder checkpoint has hidden_dim {}, config says {}",
                            enc.hidden_dim(),
                            dim
                        )));
                    }
                    EncoderBackend::Transformer(enc)
                }
                None => EncoderBackend::Transformer(TransformerEncoder::init(
                    &mut rng,
                    vocab,
                    dim,
                    config.encoder.layers,
                )?),
            },
            other => return Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        };
        let grn = Grn::init(
            &mut rng,
            dim,
            config.grn.timesteps,
            config.grn.share_params,
            config.grn.use_bias,
        );
        let head = RelationHead::init(
            &mut rng,
            dim,
            config.head.attn_layers,
            config.head.attn_heads,
            label_space.size(),
        );
        Ok(Model {
            config: config.clone(),
            label_space: label_space.clone(),
            encoder,
            grn,
            head,
            aux: None,
        })
    }

    /// Backbone parameters (encoder + GRN + head); the auxiliary classifier
    /// is visited separately.
    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        self.encoder.visit(out);
        self.grn.visit(out);
        self.head.visit(out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        self.encoder.visit_mut(out);
        self.grn.visit_mut(out);
        self.head.visit_mut(out);
    }

    /// Differentiable forward pass over one (preprocessed) bag.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        bag: &DocumentBag,
    ) -> Result<ForwardPass> {
        // Encode every path and aggregate entity representations.
        let mut per_path: Vec<BTreeMap<String, VarId>> = Vec::with_capacity(bag.paths.len());
        for path in &bag.paths {
            let input = assemble_path(path);
            let vectors = self.encoder.encode(tape, binder, &input)?;
            per_path.push(crate::encoder::path_entity_reprs(tape, vectors, &input)?);
        }

        // Plan nodes and compute their initial states on the tape.
        let specs = plan_nodes(
            bag,
            self.config.graph.include_non_bridge,
            self.config.graph.node_budget,
        );
        let mut init_vars = Vec::with_capacity(specs.len());
        for spec in &specs {
            let var = match spec.role {
                NodeRole::TargetHead(k) | NodeRole::TargetTail(k) => per_path[k]
                    .get(&spec.entity)
                    .copied()
                    .ok_or(Error::MissingRepr {
                        entity: spec.entity.clone(),
                        path: k,
                    })?,
                NodeRole::Bridge | NodeRole::NonBridge => {
                    let rows: Vec<VarId> = per_path
                        .iter()
                        .filter_map(|m| m.get(&spec.entity).copied())
                        .collect();
                    if rows.is_empty() {
                        return Err(Error::MissingRepr {
                            entity: spec.entity.clone(),
                            path: 0,
                        });
                    }
                    let stacked = tape.concat_rows(&rows);
                    tape.logsumexp_cols(stacked)
                }
            };
            init_vars.push(var);
        }
        let init_matrix = tape.concat_rows(&init_vars);

        // Edges come from the current values of the initial states.
        let init_values: Vec<Vec<f64>> = (0..specs.len())
            .map(|i| tape.value(init_matrix).row(i).to_vec())
            .collect();
        let edges = build_edges(bag, &specs, &init_values, &self.config.graph);
        let nodes: Vec<GraphNode> = specs
            .into_iter()
            .zip(init_values)
            .map(|(spec, init_state)| GraphNode {
                entity: spec.entity,
                role: spec.role,
                init_state,
            })
            .collect();
        let graph = EntityGraph::new(nodes, edges);

        let (bag_scores, path_scores, path_reprs, trace) =
            self.graph_to_scores(tape, binder, &graph, init_matrix)?;
        Ok(ForwardPass {
            bag_scores,
            path_scores,
            path_reprs,
            graph,
            trace,
        })
    }

    /// GRN plus relation head over an already-built graph. Shared by the
    /// main forward pass and the masked-subgraph pass so the two routes are
    /// numerically identical on identical graphs.
    pub fn graph_to_scores(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        graph: &EntityGraph,
        init_matrix: VarId,
    ) -> Result<(VarId, Vec<VarId>, Vec<VarId>, AttentionTrace)> {
        let states = if self.config.grn.timesteps > 0 {
            let adj = tape.leaf(graph.adjacency_matrix());
            self.grn
                .encode(tape, binder, adj, init_matrix, self.config.grn.timesteps)?
        } else {
            init_matrix
        };
        let cells = self.head.relation_matrix(tape, binder, states);
        let cells = self.head.add_role_embeddings(tape, binder, cells, graph);
        let (attended, trace) =
            self.head
                .cross_path_attend(tape, binder, cells, self.config.head.attn_budget)?;
        let n_paths = graph_path_count(graph);
        let mut path_scores = Vec::with_capacity(n_paths);
        let mut path_reprs = Vec::with_capacity(n_paths);
        for k in 0..n_paths {
            let r_k = self.head.path_relation_repr(tape, attended, graph, k)?;
            path_reprs.push(r_k);
            path_scores.push(self.head.classify_path(tape, binder, r_k));
        }
        let mode = PoolMode::parse(&self.config.head.pool)?;
        let bag_scores = bag_pool(tape, &path_scores, mode)?;
        Ok((bag_scores, path_scores, path_reprs, trace))
    }

    /// Inference pass returning plain values.
    pub fn evaluate_bag(&self, bag: &DocumentBag) -> Result<BagEval> {
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let fw = self.forward(&mut tape, &mut binder, bag)?;
        Ok(BagEval {
            scores: ScoreVector(tape.value(fw.bag_scores).row(0).to_vec()),
            path_scores: fw
                .path_scores
                .iter()
                .map(|&v| ScoreVector(tape.value(v).row(0).to_vec()))
                .collect(),
            path_reprs: fw
                .path_reprs
                .iter()
                .map(|&v| tape.value(v).row(0).to_vec())
                .collect(),
            graph: fw.graph,
            trace: fw.trace,
        })
    }

    /// Inference over a (sub)graph whose nodes carry initial-state values.
    pub fn forward_subgraph(&self, graph: &EntityGraph) -> Result<(ScoreVector, Vec<ScoreVector>)> {
        let n = graph.node_count();
        let dim = self.encoder.hidden_dim();
        let mut init = Array2::zeros((n, dim));
        for (i, node) in graph.nodes.iter().enumerate() {
            for (j, &v) in node.init_state.iter().enumerate() {
                init[[i, j]] = v;
            }
        }
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let init_matrix = tape.leaf(init);
        let (bag_scores, path_scores, _, _) =
            self.graph_to_scores(&mut tape, &mut binder, graph, init_matrix)?;
        Ok((
            ScoreVector(tape.value(bag_scores).row(0).to_vec()),
            path_scores
                .iter()
                .map(|&v| ScoreVector(tape.value(v).row(0).to_vec()))
                .collect(),
        ))
    }
}

/// Number of text paths a graph was built over.
pub fn graph_path_count(graph: &EntityGraph) -> usize {
    graph
        .nodes
        .iter()
        .filter_map(|n| match n.role {
            NodeRole::TargetHead(k) => Some(k + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// On-disk training state: model, optimizer, and RNG position.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub label_space: LabelSpace,
    pub encoder: EncoderBackend,
    pub grn: Grn,
    pub head: RelationHead,
    pub aux: Option<AuxClassifier>,
    pub optimizer: Option<crate::nn::AdamW>,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub epochs_done: usize,
    pub best_dev_f1: Option<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    pub fn into_model(self) -> (Model, Option<crate::nn::AdamW>, u64, u128, usize) {
        (
            Model {
                config: self.config,
                label_space: self.label_space,
                encoder: self.encoder,
                grn: self.grn,
                head: self.head,
                aux: self.aux,
            },
            self.optimizer,
            self.rng_seed,
            self.rng_word_pos,
            self.epochs_done,
        )
    }

    pub fn from_model(
        model: &Model,
        optimizer: Option<&crate::nn::AdamW>,
        rng_seed: u64,
        rng_word_pos: u128,
        epochs_done: usize,
        best_dev_f1: Option<f64>,
    ) -> Checkpoint {
        Checkpoint {
            config: model.config.clone(),
            label_space: model.label_space.clone(),
            encoder: model.encoder.clone(),
            grn: model.grn.clone(),
            head: model.head.clone(),
            aux: model.aux.clone(),
            optimizer: optimizer.cloned(),
            rng_seed,
            rng_word_pos,
            epochs_done,
            best_dev_f1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess_dataset, synth, LabelSpace};
    use crate::encoder::Vocab;

    fn small_setup(seed: u64) -> (RunConfig, crate::data::Dataset, Model) {
        let ls = LabelSpace::with_relations(["r1", "r2"]).unwrap();
        let ds = synth::synth_generate(seed, 6, 0.5, &ls, 15).unwrap();
        let prepped = preprocess_dataset(&ds, 512).unwrap();
        let mut config = RunConfig::default();
        config.encoder.hidden_dim = 8;
        config.head.attn_heads = 2;
        config.head.attn_layers = 1;
        config.train.seed = seed;
        let vocab = Vocab::build(&prepped);
        let model = Model::init(&config, &ls, vocab).unwrap();
        (config, prepped, model)
    }

    #[test]
    fn forward_shapes_and_simplex_scores() {
        let (_, ds, model) = small_setup(101);
        for bag in &ds.bags {
            let eval = model.evaluate_bag(bag).unwrap();
            assert_eq!(eval.scores.len(), 3);
            assert_eq!(eval.path_scores.len(), bag.paths.len());
            for ps in &eval.path_scores {
                let sum: f64 = ps.0.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(ps.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            // Pooled scores dominate each path vector componentwise.
            for ps in &eval.path_scores {
                for j in 0..3 {
                    assert!(eval.scores.0[j] >= ps.0[j] - 1e-15);
                }
            }
            assert_eq!(eval.trace.layers.len(), 1);
            assert_eq!(graph_path_count(&eval.graph), bag.paths.len());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (_, ds, model) = small_setup(103);
        let a = model.evaluate_bag(&ds.bags[0]).unwrap();
        let b = model.evaluate_bag(&ds.bags[0]).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn subgraph_forward_on_full_graph_is_bitwise_identical() {
        let (_, ds, model) = small_setup(107);
        for bag in ds.bags.iter().take(3) {
            let eval = model.evaluate_bag(bag).unwrap();
            let keep: std::collections::BTreeSet<usize> = (0..eval.graph.node_count()).collect();
            let full = eval.graph.subgraph_keeping(&keep);
            let (scores, path_scores) = model.forward_subgraph(&full).unwrap();
            assert_eq!(scores, eval.scores);
            assert_eq!(path_scores, eval.path_scores);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (_, _, model) = small_setup(109);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = Checkpoint::from_model(&model, None, 7, 42, 3, Some(0.5));
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let (restored, _, seed, pos, epochs) = loaded.into_model();
        assert_eq!(seed, 7);
        assert_eq!(pos, 42);
        assert_eq!(epochs, 3);
        assert_eq!(restored.encoder, model.encoder);
        assert_eq!(restored.grn, model.grn);
        assert_eq!(restored.head, model.head);
    }

    #[test]
    fn grn_timesteps_zero_skips_the_encoder() {
        let (mut config, ds, _) = small_setup(113);
        config.grn.timesteps = 0;
        let vocab = Vocab::build(&ds);
        let model = Model::init(&config, &ds.label_space, vocab).unwrap();
        // Still produces valid scores.
        let eval = model.evaluate_bag(&ds.bags[0]).unwrap();
        assert_eq!(eval.scores.len(), 3);
    }
}
