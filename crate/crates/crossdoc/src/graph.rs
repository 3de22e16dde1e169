//! Per-bag unified entity graph: role-typed nodes for target, bridge, and
//! non-bridge entities, co-occurrence edges between targets and co-occurring
//! non-targets, and semantic-related edges between similar non-targets.
//!
//! Target entities are duplicated per text path; every non-target entity gets
//! a single node for the whole bag, its initial state aggregated over the
//! paths it appears in.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::GraphConfig;
use crate::data::DocumentBag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    /// The head target entity, specific to text path `k`.
    TargetHead(usize),
    /// The tail target entity, specific to text path `k`.
    TargetTail(usize),
    /// Non-target entity with mentions in both documents of some path.
    Bridge,
    /// Non-target entity co-occurring with only one side.
    NonBridge,
}

impl NodeRole {
    pub fn is_target(&self) -> bool {
        matches!(self, NodeRole::TargetHead(_) | NodeRole::TargetTail(_))
    }

    /// Role category index (path-agnostic), used for cell role embeddings.
    pub fn category(&self) -> usize {
        match self {
            NodeRole::TargetHead(_) => 0,
            NodeRole::TargetTail(_) => 1,
            NodeRole::Bridge => 2,
            NodeRole::NonBridge => 3,
        }
    }
}

pub const ROLE_CATEGORIES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Cooccurrence,
    SemanticRelated,
}

/// Undirected edge; endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

impl GraphEdge {
    pub fn new(x: usize, y: usize, kind: EdgeKind) -> GraphEdge {
        GraphEdge {
            a: x.min(y),
            b: x.max(y),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub entity: String,
    pub role: NodeRole,
    /// Pre-GRN state, from the encoder.
    pub init_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl EntityGraph {
    pub fn new(nodes: Vec<GraphNode>, mut edges: Vec<GraphEdge>) -> EntityGraph {
        edges.sort();
        edges.dedup();
        let mut adjacency = vec![BTreeSet::new(); nodes.len()];
        for e in &edges {
            assert!(e.a != e.b, "self-loop on node {}", e.a);
            assert!(e.b < nodes.len(), "edge endpoint {} out of range", e.b);
            adjacency[e.a].insert(e.b);
            adjacency[e.b].insert(e.a);
        }
        EntityGraph {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, id: usize) -> &BTreeSet<usize> {
        &self.adjacency[id]
    }

    /// Symmetric 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> Array2<f64> {
        let n = self.nodes.len();
        let mut a = Array2::zeros((n, n));
        for e in &self.edges {
            a[[e.a, e.b]] = 1.0;
            a[[e.b, e.a]] = 1.0;
        }
        a
    }

    pub fn target_head(&self, path: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.role == NodeRole::TargetHead(path))
    }

    pub fn target_tail(&self, path: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.role == NodeRole::TargetTail(path))
    }

    pub fn non_target_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].role.is_target())
            .collect()
    }

    /// Subgraph keeping the listed nodes (ascending original id); edges with
    /// a removed endpoint are dropped and ids remapped.
    pub fn subgraph_keeping(&self, keep: &BTreeSet<usize>) -> EntityGraph {
        let order: Vec<usize> = keep.iter().copied().collect();
        let remap: BTreeMap<usize, usize> =
            order.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let nodes = order.iter().map(|&i| self.nodes[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let a = remap.get(&e.a)?;
                let b = remap.get(&e.b)?;
                Some(GraphEdge::new(*a, *b, e.kind))
            })
            .collect();
        EntityGraph::new(nodes, edges)
    }
}

/// Entity representations per path, keyed by entity id. Values are the
/// encoder-produced vectors.
#[derive(Debug, Clone, Default)]
pub struct PathReprs {
    pub by_path: Vec<BTreeMap<String, Vec<f64>>>,
}

/// Role assignment for the non-target entities of a bag. A non-target entity
/// is a bridge iff, in at least one path, it has mentions in both the head
/// and the tail document; otherwise it is non-bridge. Target ids are not in
/// the map: they get one target node per path.
pub fn classify_roles(bag: &DocumentBag) -> BTreeMap<String, NodeRole> {
    let mut out = BTreeMap::new();
    for entity in bag.non_target_entities() {
        let bridging = bag.paths.iter().any(|p| {
            p.head_doc.mentions_entity(&entity) && p.tail_doc.mentions_entity(&entity)
        });
        let role = if bridging {
            NodeRole::Bridge
        } else {
            NodeRole::NonBridge
        };
        out.insert(entity, role);
    }
    out
}

/// A planned node: entity plus role, before states are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub entity: String,
    pub role: NodeRole,
}

/// Node list for a bag: two target nodes per path, then the non-target
/// entities in id order. When the total exceeds `node_budget`, non-bridge
/// nodes with the fewest mentions are dropped (ties by entity id).
pub fn plan_nodes(bag: &DocumentBag, include_non_bridge: bool, node_budget: usize) -> Vec<NodeSpec> {
    let mut specs = Vec::new();
    for k in 0..bag.paths.len() {
        specs.push(NodeSpec {
            entity: bag.head_id.clone(),
            role: NodeRole::TargetHead(k),
        });
        specs.push(NodeSpec {
            entity: bag.tail_id.clone(),
            role: NodeRole::TargetTail(k),
        });
    }
    for (entity, role) in classify_roles(bag) {
        if role == NodeRole::NonBridge && !include_non_bridge {
            continue;
        }
        specs.push(NodeSpec { entity, role });
    }

    if specs.len() > node_budget {
        let mut droppable: Vec<(usize, String)> = specs
            .iter()
            .filter(|s| s.role == NodeRole::NonBridge)
            .map(|s| (bag.mention_count(&s.entity), s.entity.clone()))
            .collect();
        droppable.sort();
        let excess = specs.len() - node_budget;
        let dropped: BTreeSet<String> = droppable
            .into_iter()
            .take(excess)
            .map(|(_, e)| e)
            .collect();
        specs.retain(|s| s.role != NodeRole::NonBridge || !dropped.contains(&s.entity));
    }
    specs
}

/// Does `entity` appear anywhere in path `k`?
fn in_path(bag: &DocumentBag, entity: &str, k: usize) -> bool {
    bag.paths[k].head_doc.mentions_entity(entity) || bag.paths[k].tail_doc.mentions_entity(entity)
}

/// Column-wise log-sum-exp over equal-length vectors, max-shifted.
pub(crate) fn logsumexp_vecs(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let max = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = rows.iter().map(|r| (r[j] - max).exp()).sum();
            max + sum.ln()
        })
        .collect()
}

/// Initial state per planned node. Target nodes take the entity's
/// representation in their path; a non-target node aggregates its per-path
/// representations by log-sum-exp.
pub fn node_init_values(
    bag: &DocumentBag,
    specs: &[NodeSpec],
    reprs: &PathReprs,
) -> Result<Vec<Vec<f64>>> {
    specs
        .iter()
        .map(|spec| match spec.role {
            NodeRole::TargetHead(k) | NodeRole::TargetTail(k) => reprs
                .by_path
                .get(k)
                .and_then(|m| m.get(&spec.entity))
                .cloned()
                .ok_or(Error::MissingRepr {
                    entity: spec.entity.clone(),
                    path: k,
                }),
            NodeRole::Bridge | NodeRole::NonBridge => {
                let mut rows = Vec::new();
                for (k, by_entity) in reprs.by_path.iter().enumerate() {
                    if in_path(bag, &spec.entity, k) {
                        let r = by_entity.get(&spec.entity).ok_or(Error::MissingRepr {
                            entity: spec.entity.clone(),
                            path: k,
                        })?;
                        rows.push(r);
                    }
                }
                if rows.is_empty() {
                    return Err(Error::MissingRepr {
                        entity: spec.entity.clone(),
                        path: 0,
                    });
                }
                Ok(logsumexp_vecs(&rows))
            }
        })
        .collect()
}

/// Cosine similarity. A zero vector yields 0 (no edge) with a warning.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine of a zero vector defined as 0");
        return 0.0;
    }
    dot / (nu * nv)
}

/// Edge set over planned nodes: co-occurrence edges between each per-path
/// target node and the non-targets mentioned in the same document of that
/// path, and semantic-related edges between non-target pairs whose initial
/// states have cosine similarity strictly above `eta`.
pub fn build_edges(
    bag: &DocumentBag,
    specs: &[NodeSpec],
    inits: &[Vec<f64>],
    cfg: &GraphConfig,
) -> Vec<GraphEdge> {
    let mut edges = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (k, doc) = match spec.role {
            NodeRole::TargetHead(k) => (k, &bag.paths[k].head_doc),
            NodeRole::TargetTail(k) => (k, &bag.paths[k].tail_doc),
            _ => continue,
        };
        let _ = k;
        for (j, other) in specs.iter().enumerate() {
            if other.role.is_target() {
                continue;
            }
            if doc.mentions_entity(&other.entity) {
                edges.push(GraphEdge::new(i, j, EdgeKind::Cooccurrence));
            }
        }
    }

    if cfg.semantic_edges {
        for i in 0..specs.len() {
            if specs[i].role.is_target() {
                continue;
            }
            for j in i + 1..specs.len() {
                if specs[j].role.is_target() {
                    continue;
                }
                if !cfg.cross_path_semantic_edges {
                    let shared = (0..bag.paths.len()).any(|k| {
                        in_path(bag, &specs[i].entity, k) && in_path(bag, &specs[j].entity, k)
                    });
                    if !shared {
                        continue;
                    }
                }
                if cosine(&inits[i], &inits[j]) > cfg.eta {
                    edges.push(GraphEdge::new(i, j, EdgeKind::SemanticRelated));
                }
            }
        }
    }
    edges
}

/// Full graph construction from per-path entity representations.
pub fn build_graph(bag: &DocumentBag, reprs: &PathReprs, cfg: &GraphConfig) -> Result<EntityGraph> {
    let specs = plan_nodes(bag, cfg.include_non_bridge, cfg.node_budget);
    let inits = node_init_values(bag, &specs, reprs)?;
    let edges = build_edges(bag, &specs, &inits, cfg);
    let nodes = specs
        .into_iter()
        .zip(inits)
        .map(|(spec, init_state)| GraphNode {
            entity: spec.entity,
            role: spec.role,
            init_state,
        })
        .collect();
    Ok(EntityGraph::new(nodes, edges))
}
