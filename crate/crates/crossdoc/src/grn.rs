//! Graph recurrent network: synchronous gated updates of node states over
//! the entity graph.
//!
//! Per timestep, every node gathers the unweighted sum of its neighbors'
//! previous states and passes it through a GRU-style cell:
//!
//! ```text
//! c_i = sum of neighbor states            (context)
//! r_i = sigmoid(c_i W_r + e_i U_r [+ b_r])  (reset gate)
//! z_i = sigmoid(c_i W_z + e_i U_z [+ b_z])  (update gate)
//! u_i = tanh(c_i W_u + (r_i . e_i) U_u [+ b_u])
//! e_i' = (1 - z_i) . u_i + z_i . e_i
//! ```
//!
//! States are rows, so each `W`/`U` here acts on row vectors (the transpose
//! of the column-vector convention). Biases are an implementation choice and
//! can be disabled for the exact-equation mode the oracle tests use.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::nn::{glorot, Binder};
use crate::tape::{Tape, VarId};

/// One recurrent cell: the six gate matrices plus optional biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnCell {
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub w_u: Array2<f64>,
    pub u_u: Array2<f64>,
    pub b_r: Array2<f64>,
    pub b_z: Array2<f64>,
    pub b_u: Array2<f64>,
}

impl GrnCell {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        GrnCell {
            w_r: glorot(rng, dim, dim),
            u_r: glorot(rng, dim, dim),
            w_z: glorot(rng, dim, dim),
            u_z: glorot(rng, dim, dim),
            w_u: glorot(rng, dim, dim),
            u_u: glorot(rng, dim, dim),
            b_r: Array2::zeros((1, dim)),
            b_z: Array2::zeros((1, dim)),
            b_u: Array2::zeros((1, dim)),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        GrnCell {
            w_r: Array2::zeros((dim, dim)),
            u_r: Array2::zeros((dim, dim)),
            w_z: Array2::zeros((dim, dim)),
            u_z: Array2::zeros((dim, dim)),
            w_u: Array2::zeros((dim, dim)),
            u_u: Array2::zeros((dim, dim)),
            b_r: Array2::zeros((1, dim)),
            b_z: Array2::zeros((1, dim)),
            b_u: Array2::zeros((1, dim)),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, use_bias: bool, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.w_r"), &self.w_r));
        out.push((format!("{prefix}.u_r"), &self.u_r));
        out.push((format!("{prefix}.w_z"), &self.w_z));
        out.push((format!("{prefix}.u_z"), &self.u_z));
        out.push((format!("{prefix}.w_u"), &self.w_u));
        out.push((format!("{prefix}.u_u"), &self.u_u));
        if use_bias {
            out.push((format!("{prefix}.b_r"), &self.b_r));
            out.push((format!("{prefix}.b_z"), &self.b_z));
            out.push((format!("{prefix}.b_u"), &self.b_u));
        }
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        use_bias: bool,
        out: &mut Vec<(String, &'a mut Array2<f64>)>,
    ) {
        out.push((format!("{prefix}.w_r"), &mut self.w_r));
        out.push((format!("{prefix}.u_r"), &mut self.u_r));
        out.push((format!("{prefix}.w_z"), &mut self.w_z));
        out.push((format!("{prefix}.u_z"), &mut self.u_z));
        out.push((format!("{prefix}.w_u"), &mut self.w_u));
        out.push((format!("{prefix}.u_u"), &mut self.u_u));
        if use_bias {
            out.push((format!("{prefix}.b_r"), &mut self.b_r));
            out.push((format!("{prefix}.b_z"), &mut self.b_z));
            out.push((format!("{prefix}.b_u"), &mut self.b_u));
        }
    }
}

/// The GRN encoder parameters: one cell shared across timesteps, or one cell
/// per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grn {
    pub cells: Vec<GrnCell>,
    pub use_bias: bool,
}

impl Grn {
    pub fn init(
        rng: &mut ChaCha8Rng,
        dim: usize,
        timesteps: usize,
        share_params: bool,
        use_bias: bool,
    ) -> Self {
        let n_cells = if share_params { 1 } else { timesteps.max(1) };
        Grn {
            cells: (0..n_cells).map(|_| GrnCell::init(rng, dim)).collect(),
            use_bias,
        }
    }

    fn cell_index(&self, t: usize) -> usize {
        t.min(self.cells.len() - 1)
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array2<f64>)>) {
        for (i, cell) in self.cells.iter().enumerate() {
            cell.visit(&format!("grn.cell{i}"), self.use_bias, out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        let use_bias = self.use_bias;
        for (i, cell) in self.cells.iter_mut().enumerate() {
            cell.visit_mut(&format!("grn.cell{i}"), use_bias, out);
        }
    }

    /// Run `timesteps` synchronous updates over all nodes. `adjacency` is the
    /// bound 0/1 matrix, `states` the `[|V|, dim]` initial states.
    pub fn encode(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        adjacency: VarId,
        states: VarId,
        timesteps: usize,
    ) -> Result<VarId> {
        if timesteps < 1 {
            return Err(Error::Argument(
                "GRN timesteps must be at least 1; disable the encoder instead of passing 0".into(),
            ));
        }
        let shape = tape.value(states).raw_dim();
        let ones = tape.leaf(Array2::ones(shape));
        let mut current = states;
        for t in 0..timesteps {
            let idx = self.cell_index(t);
            let cell = &self.cells[idx];
            let prefix = format!("grn.cell{idx}");
            let ctx = tape.matmul(adjacency, current);
            let r = self.gate(tape, binder, &prefix, "r", &cell.w_r, &cell.u_r, &cell.b_r, ctx, current);
            let r = tape.sigmoid(r);
            let z = self.gate(tape, binder, &prefix, "z", &cell.w_z, &cell.u_z, &cell.b_z, ctx, current);
            let z = tape.sigmoid(z);
            let gated = tape.mul(r, current);
            let u = self.gate(tape, binder, &prefix, "u", &cell.w_u, &cell.u_u, &cell.b_u, ctx, gated);
            let u = tape.tanh(u);
            // e' = (1 - z) . u + z . e, kept in this exact form.
            let omz = tape.sub(ones, z);
            let keep_new = tape.mul(omz, u);
            let keep_old = tape.mul(z, current);
            current = tape.add(keep_new, keep_old);
        }
        Ok(current)
    }

    #[allow(clippy::too_many_arguments)]
    fn gate(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        name: &str,
        w: &Array2<f64>,
        u: &Array2<f64>,
        b: &Array2<f64>,
        ctx: VarId,
        state: VarId,
    ) -> VarId {
        let wv = binder.bind(tape, &format!("{prefix}.w_{name}"), w);
        let uv = binder.bind(tape, &format!("{prefix}.u_{name}"), u);
        let cw = tape.matmul(ctx, wv);
        let eu = tape.matmul(state, uv);
        let sum = tape.add(cw, eu);
        if self.use_bias {
            let bv = binder.bind(tape, &format!("{prefix}.b_{name}"), b);
            tape.add_row(sum, bv)
        } else {
            sum
        }
    }
}

/// Context rows on plain values: row i is the sum of node i's neighbor
/// states.
pub fn neighbor_context_values(graph: &EntityGraph, states: &Array2<f64>) -> Array2<f64> {
    let (n, d) = states.dim();
    assert_eq!(n, graph.node_count());
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for &j in graph.neighbors(i) {
            for k in 0..d {
                out[[i, k]] += states[[j, k]];
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One gated update for a single node on plain values.
pub fn gru_step_values(context: &[f64], state: &[f64], cell: &GrnCell, use_bias: bool) -> Vec<f64> {
    let d = state.len();
    let affine = |w: &Array2<f64>, u: &Array2<f64>, b: &Array2<f64>, gated: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let mut acc = if use_bias { b[[0, j]] } else { 0.0 };
                for k in 0..d {
                    acc += context[k] * w[[k, j]] + gated[k] * u[[k, j]];
                }
                acc
            })
            .collect()
    };
    let r: Vec<f64> = affine(&cell.w_r, &cell.u_r, &cell.b_r, state)
        .into_iter()
        .map(sigmoid)
        .collect();
    let z: Vec<f64> = affine(&cell.w_z, &cell.u_z, &cell.b_z, state)
        .into_iter()
        .map(sigmoid)
        .collect();
    let gated: Vec<f64> = r.iter().zip(state).map(|(ri, ei)| ri * ei).collect();
    let u: Vec<f64> = affine(&cell.w_u, &cell.u_u, &cell.b_u, &gated)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..d)
        .map(|j| (1.0 - z[j]) * u[j] + z[j] * state[j])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeKind, EntityGraph, GraphEdge, GraphNode, NodeRole};
    use rand::Rng;
    use rand::SeedableRng;

    fn graph_with(n: usize, edges: &[(usize, usize)]) -> EntityGraph {
        let nodes = (0..n)
            .map(|i| GraphNode {
                entity: format!("e{i}"),
                role: NodeRole::NonBridge,
                init_state: vec![],
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(a, b)| GraphEdge::new(a, b, EdgeKind::Cooccurrence))
            .collect();
        EntityGraph::new(nodes, edges)
    }

    #[test]
    fn isolated_node_context_is_zero() {
        let g = graph_with(3, &[(0, 1)]);
        let states = Array2::from_shape_vec((3, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let ctx = neighbor_context_values(&g, &states);
        assert_eq!(ctx.row(2).to_vec(), vec![0.0, 0.0]);
        // Node 0's only neighbor is node 1.
        assert_eq!(ctx.row(0).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn context_matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..30 {
            let n = 10;
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.3) {
                        edges.push((a, b));
                    }
                }
            }
            let g = graph_with(n, &edges);
            let states = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0));
            let ctx = neighbor_context_values(&g, &states);
            // Brute force over the edge list.
            let mut brute = Array2::<f64>::zeros((n, 4));
            for &(a, b) in &edges {
                for k in 0..4 {
                    brute[[a, k]] += states[[b, k]];
                    brute[[b, k]] += states[[a, k]];
                }
            }
            assert_eq!(ctx, brute);
            // And the tape route (adjacency matmul) agrees exactly.
            let mut tape = Tape::new();
            let adj = tape.leaf(g.adjacency_matrix());
            let st = tape.leaf(states.clone());
            let mm = tape.matmul(adj, st);
            for i in 0..n {
                for k in 0..4 {
                    assert!((tape.value(mm)[[i, k]] - brute[[i, k]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_params_zero_context_halves_state() {
        // All matrices zero, c = 0: r = z = 0.5, u = 0, so e' = 0.5 e.
        let cell = GrnCell::zeros(3);
        let state = vec![0.4, -1.0, 2.5];
        let out = gru_step_values(&[0.0; 3], &state, &cell, false);
        for j in 0..3 {
            assert!((out[j] - 0.5 * state[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn update_is_a_convex_combination() {
        // |e'_d| <= max(|e_d|, 1) since u is in (-1, 1).
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let d = 4;
            let cell = GrnCell::init(&mut rng, d);
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let e: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = gru_step_values(&c, &e, &cell, true);
            for j in 0..d {
                assert!(out[j].abs() <= e[j].abs().max(1.0) + 1e-12);
            }
        }
    }

    /// Independent scalar-loop reference for a full multi-step encode.
    fn scalar_encode_reference(
        neighbors: &[Vec<usize>],
        init: &[Vec<f64>],
        cell: &GrnCell,
        timesteps: usize,
        use_bias: bool,
    ) -> Vec<Vec<f64>> {
        let n = init.len();
        let d = init[0].len();
        let mut states = init.to_vec();
        for _ in 0..timesteps {
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let mut c = vec![0.0; d];
                for &j in &neighbors[i] {
                    for k in 0..d {
                        c[k] += states[j][k];
                    }
                }
                next.push(gru_step_values(&c, &states[i], cell, use_bias));
            }
            states = next;
        }
        states
    }

    #[test]
    fn encode_matches_scalar_reference_on_path_graph() {
        // 3-node path graph, hidden_dim 2, fixed random parameters, T = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let grn = Grn {
            cells: vec![GrnCell::init(&mut rng, 2)],
            use_bias: false,
        };
        let g = graph_with(3, &[(0, 1), (1, 2)]);
        let init = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let adj = tape.leaf(g.adjacency_matrix());
        let st = tape.leaf(init.clone());
        let out = grn.encode(&mut tape, &mut binder, adj, st, 2).unwrap();

        let init_rows: Vec<Vec<f64>> = (0..3).map(|i| init.row(i).to_vec()).collect();
        let neighbors: Vec<Vec<usize>> = (0..3)
            .map(|i| g.neighbors(i).iter().copied().collect())
            .collect();
        let reference = scalar_encode_reference(&neighbors, &init_rows, &grn.cells[0], 2, false);
        for i in 0..3 {
            for j in 0..2 {
                assert!(
                    (tape.value(out)[[i, j]] - reference[i][j]).abs() < 1e-10,
                    "node {i} dim {j}"
                );
            }
        }
    }

    #[test]
    fn update_gate_forced_open_is_identity() {
        // Huge z bias saturates the update gate: output equals input exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut cell = GrnCell::init(&mut rng, 3);
        cell.b_z = Array2::from_elem((1, 3), 50.0);
        let grn = Grn {
            cells: vec![cell],
            use_bias: true,
        };
        let g = graph_with(3, &[(0, 1), (1, 2)]);
        let init = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let adj = tape.leaf(g.adjacency_matrix());
        let st = tape.leaf(init.clone());
        let out = grn.encode(&mut tape, &mut binder, adj, st, 3).unwrap();
        assert_eq!(tape.value(out), &init);
    }

    #[test]
    fn single_node_graph_evolves_with_zero_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let grn = Grn {
            cells: vec![GrnCell::init(&mut rng, 2)],
            use_bias: true,
        };
        let g = graph_with(1, &[]);
        let init = Array2::from_shape_vec((1, 2), vec![0.3, -0.8]).unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let adj = tape.leaf(g.adjacency_matrix());
        let st = tape.leaf(init.clone());
        let out = grn.encode(&mut tape, &mut binder, adj, st, 1).unwrap();
        let expect = gru_step_values(&[0.0, 0.0], &[0.3, -0.8], &grn.cells[0], true);
        for j in 0..2 {
            assert!((tape.value(out)[[0, j]] - expect[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_timesteps_is_an_argument_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let grn = Grn {
            cells: vec![GrnCell::init(&mut rng, 2)],
            use_bias: true,
        };
        let g = graph_with(2, &[(0, 1)]);
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let adj = tape.leaf(g.adjacency_matrix());
        let st = tape.leaf(Array2::zeros((2, 2)));
        assert!(grn.encode(&mut tape, &mut binder, adj, st, 0).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let grn = Grn {
            cells: vec![GrnCell::init(&mut rng, 3)],
            use_bias: true,
        };
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (0, 3), (1, 3)];
        let g = graph_with(4, &edges);
        let init = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));

        let run = |g: &EntityGraph, init: &Array2<f64>| {
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let adj = tape.leaf(g.adjacency_matrix());
            let st = tape.leaf(init.clone());
            let out = grn.encode(&mut tape, &mut binder, adj, st, 3).unwrap();
            tape.value(out).clone()
        };

        let base = run(&g, &init);

        // Permute nodes by pi = [2, 0, 3, 1] (new index of old node i).
        let pi = [2usize, 0, 3, 1];
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (pi[a], pi[b])).collect();
        let pg = graph_with(4, &pedges);
        let mut pinit = Array2::zeros((4, 3));
        for i in 0..4 {
            for j in 0..3 {
                pinit[[pi[i], j]] = init[[i, j]];
            }
        }
        let permuted = run(&pg, &pinit);
        for i in 0..4 {
            for j in 0..3 {
                assert!((permuted[[pi[i], j]] - base[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_module_gradient_check() {
        // Finite differences over every GRN parameter on a 5-node graph.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let dim = 3;
        let grn = Grn {
            cells: vec![GrnCell::init(&mut rng, dim)],
            use_bias: true,
        };
        let g = graph_with(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]);
        let init = Array2::from_shape_fn((5, dim), |_| rng.gen_range(-1.0..1.0));
        let weight = Array2::from_shape_fn((5, dim), |_| rng.gen_range(-1.0..1.0));

        let loss_of = |grn: &Grn| -> f64 {
            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let adj = tape.leaf(g.adjacency_matrix());
            let st = tape.leaf(init.clone());
            let out = grn.encode(&mut tape, &mut binder, adj, st, 3).unwrap();
            let w = tape.leaf(weight.clone());
            let prod = tape.mul(out, w);
            let act = tape.tanh(prod);
            let root = tape.sum_all(act);
            tape.value(root)[[0, 0]]
        };

        // Analytic gradients.
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        let adj = tape.leaf(g.adjacency_matrix());
        let st = tape.leaf(init.clone());
        let out = grn.encode(&mut tape, &mut binder, adj, st, 3).unwrap();
        let w = tape.leaf(weight.clone());
        let prod = tape.mul(out, w);
        let act = tape.tanh(prod);
        let root = tape.sum_all(act);
        let grads = tape.backward(root);
        let named = binder.collect(&tape, &grads);

        let step = 1e-4;
        let mut params = Vec::new();
        grn.visit(&mut params);
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let analytic = &named[&name];
            let (rows, cols) = analytic.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = grn.clone();
                    let mut minus = grn.clone();
                    {
                        let mut pv = Vec::new();
                        plus.visit_mut(&mut pv);
                        *pv.iter_mut()
                            .find(|(n, _)| n == &name)
                            .unwrap()
                            .1
                            .get_mut((r, c))
                            .unwrap() += step;
                        let mut mv = Vec::new();
                        minus.visit_mut(&mut mv);
                        *mv.iter_mut()
                            .find(|(n, _)| n == &name)
                            .unwrap()
                            .1
                            .get_mut((r, c))
                            .unwrap() -= step;
                    }
                    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
                    let a = analytic[[r, c]];
                    let denom = a.abs().max(numeric.abs()).max(1e-3);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4,
                        "{name}[{r},{c}]: analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }
}
