//! Color refinement on tripartite graphs.
//!
//! One refinement round mirrors the four message-passing sub-layers: quad
//! nodes absorb variable colors, constraint nodes absorb variable and
//! (intermediate) quad colors, quad nodes absorb the fresh constraint colors,
//! and finally variable nodes absorb constraint and quad colors. Refinement
//! runs until the number of distinct colors stops growing.
//!
//! Instead of real-valued hash sums, a node's new color is the interned
//! canonical signature `(old color, sorted multiset of (weight, neighbor
//! color) per incoming edge class)`. Signatures are collision-free by
//! construction and refine at least as finely as any injective hash, so
//! non-separation verdicts transfer directly to the message-passing networks
//! built on the same aggregation.
//!
//! The reported round count includes the final confirming round: a graph whose
//! initial coloring is already stable reports one round, the round that
//! exhibited stability.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Edge, TripartiteGraph};

#[derive(Debug, Error, PartialEq)]
pub enum WlError {
    #[error("nodes of color {color} disagree on the weight sum to color {to_color} (spread {spread})")]
    WellDefinednessViolation {
        color: u32,
        to_color: u32,
        spread: f64,
    },
    #[error("double-counting identity fails for colors ({a}, {b}): {lhs} vs {rhs}")]
    DoubleCountingViolation { a: u32, b: u32, lhs: f64, rhs: f64 },
    #[error("graphs must not be separated for this operation")]
    Separated,
    #[error("vector length {got} does not match variable count {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Node-to-color assignment. Color ids are dense over the whole graph and
/// never shared across node classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coloring {
    pub var_colors: Vec<u32>,
    pub quad_colors: Vec<u32>,
    pub cons_colors: Vec<u32>,
    pub palette_size: u32,
}

impl Coloring {
    /// Distinct colors per node class.
    pub fn class_palette_counts(&self) -> (usize, usize, usize) {
        (
            distinct(&self.var_colors),
            distinct(&self.quad_colors),
            distinct(&self.cons_colors),
        )
    }
}

fn distinct(colors: &[u32]) -> usize {
    let mut sorted = colors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

/// Outcome of running refinement to stability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WlResult {
    pub stable: Coloring,
    /// Rounds executed, counting the confirming round.
    pub rounds: usize,
    /// Palette sizes, starting with the initial coloring.
    pub history: Vec<u32>,
}

/// Weight sums between stable color classes (per ordered color pair), plus
/// class sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorSumTable {
    /// `(from color, to color) -> S`: weight from any node of the first color
    /// to the whole class of the second.
    pub entries: BTreeMap<(u32, u32), f64>,
    pub class_sizes: BTreeMap<u32, usize>,
}

/// Variable pairing between two non-separated graphs, along with the stable
/// colors from the joint refinement it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCorrespondence {
    /// `(source variable, destination variable)` with equal stable colors.
    pub pairs: Vec<(usize, usize)>,
    pub src_var_colors: Vec<u32>,
    pub dst_var_colors: Vec<u32>,
}

/// Canonical key for a feature or weight. With `tol == 0` values compare by
/// exact bits (negative zero folded into zero); with `tol > 0` values are
/// quantized onto a grid of pitch `tol` first.
fn value_key(v: f64, tol: f64) -> u64 {
    if tol > 0.0 {
        let q = (v / tol).round();
        (q as i64) as u64
    } else {
        let v = if v == 0.0 { 0.0 } else { v };
        v.to_bits()
    }
}

struct Interner {
    map: HashMap<Vec<u64>, u32>,
}

impl Interner {
    fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    fn intern(&mut self, sig: Vec<u64>) -> u32 {
        let next = self.map.len() as u32;
        *self.map.entry(sig).or_insert(next)
    }

    fn len(&self) -> u32 {
        self.map.len() as u32
    }
}

const TAG_VAR: u64 = 1;
const TAG_QUAD: u64 = 2;
const TAG_CONS: u64 = 3;
const TAG_QUAD_STAGE1: u64 = 4;

/// Sorted multiset of `(weight key, neighbor color)` pairs, flattened.
fn neighbor_multiset(edges: &[(f64, u32)], tol: f64) -> Vec<u64> {
    let mut pairs: Vec<(u32, u64)> = edges
        .iter()
        .map(|&(w, color)| (color, value_key(w, tol)))
        .collect();
    pairs.sort_unstable();
    let mut flat = Vec::with_capacity(1 + 2 * pairs.len());
    flat.push(pairs.len() as u64);
    for (color, wkey) in pairs {
        flat.push(u64::from(color));
        flat.push(wkey);
    }
    flat
}

/// `(weight, neighbor index)` lists per node.
type AdjacencyList = Vec<Vec<(f64, usize)>>;

fn adjacency(edges: &[Edge], num_a: usize, num_b: usize) -> (AdjacencyList, AdjacencyList) {
    let mut a_side = vec![Vec::new(); num_a];
    let mut b_side = vec![Vec::new(); num_b];
    for edge in edges {
        a_side[edge.a].push((edge.weight, edge.b));
        b_side[edge.b].push((edge.weight, edge.a));
    }
    (a_side, b_side)
}

fn colored(adj: &[(f64, usize)], colors: &[u32]) -> Vec<(f64, u32)> {
    adj.iter().map(|&(w, idx)| (w, colors[idx])).collect()
}

/// Initial coloring from node classes and feature tuples.
pub fn initial_coloring(g: &TripartiteGraph, feature_tol: f64) -> Coloring {
    let mut interner = Interner::new();
    let var_colors = g
        .var_nodes
        .iter()
        .map(|node| {
            let (lo_val, lo_ind) = node.lower.encoding();
            let (hi_val, hi_ind) = node.upper.encoding();
            interner.intern(vec![
                TAG_VAR,
                value_key(node.linear, feature_tol),
                value_key(lo_val, feature_tol),
                value_key(lo_ind, 0.0),
                value_key(hi_val, feature_tol),
                value_key(hi_ind, 0.0),
            ])
        })
        .collect();
    let quad_colors = g
        .quad_nodes
        .iter()
        .map(|node| {
            interner.intern(vec![
                TAG_QUAD,
                if node.row == node.col { 0 } else { 1 },
                value_key(node.coeff, feature_tol),
            ])
        })
        .collect();
    let cons_colors = g
        .cons_nodes
        .iter()
        .map(|node| interner.intern(vec![TAG_CONS, value_key(node.rhs, feature_tol)]))
        .collect();
    Coloring {
        var_colors,
        quad_colors,
        cons_colors,
        palette_size: interner.len(),
    }
}

/// One full refinement round: the four sub-updates in message-passing order.
pub fn refine_round(g: &TripartiteGraph, coloring: &Coloring, feature_tol: f64) -> Coloring {
    let (var_to_quad, quad_to_var) = adjacency(&g.e12, g.num_vars(), g.num_quads());
    let (var_to_cons, cons_to_var) = adjacency(&g.e13, g.num_vars(), g.num_cons());
    let (quad_to_cons, cons_to_quad) = adjacency(&g.e23, g.num_quads(), g.num_cons());

    // Stage 1: quad nodes via variable nodes (intermediate ids).
    let mut stage1 = Interner::new();
    let quad_mid: Vec<u32> = (0..g.num_quads())
        .map(|v| {
            let mut sig = vec![TAG_QUAD_STAGE1, u64::from(coloring.quad_colors[v])];
            sig.extend(neighbor_multiset(
                &colored(&quad_to_var[v], &coloring.var_colors),
                feature_tol,
            ));
            stage1.intern(sig)
        })
        .collect();

    // Stages 2-4 share one interner so the final ids are dense and
    // class-disjoint.
    let mut interner = Interner::new();

    let cons_colors: Vec<u32> = (0..g.num_cons())
        .map(|c| {
            let mut sig = vec![TAG_CONS, u64::from(coloring.cons_colors[c])];
            sig.extend(neighbor_multiset(
                &colored(&cons_to_var[c], &coloring.var_colors),
                feature_tol,
            ));
            sig.extend(neighbor_multiset(
                &colored(&cons_to_quad[c], &quad_mid),
                feature_tol,
            ));
            interner.intern(sig)
        })
        .collect();

    let quad_colors: Vec<u32> = (0..g.num_quads())
        .map(|v| {
            let mut sig = vec![TAG_QUAD, u64::from(quad_mid[v])];
            sig.extend(neighbor_multiset(
                &colored(&quad_to_cons[v], &cons_colors),
                feature_tol,
            ));
            interner.intern(sig)
        })
        .collect();

    let var_colors: Vec<u32> = (0..g.num_vars())
        .map(|u| {
            let mut sig = vec![TAG_VAR, u64::from(coloring.var_colors[u])];
            sig.extend(neighbor_multiset(
                &colored(&var_to_cons[u], &cons_colors),
                feature_tol,
            ));
            sig.extend(neighbor_multiset(
                &colored(&var_to_quad[u], &quad_colors),
                feature_tol,
            ));
            interner.intern(sig)
        })
        .collect();

    Coloring {
        var_colors,
        quad_colors,
        cons_colors,
        palette_size: interner.len(),
    }
}

/// Runs refinement until the palette stops growing.
///
/// ```
/// use qcqp::counterexamples::build_objective_pair;
/// use qcqp::graph::build_graph;
/// use qcqp::wl::{run_wl, separates};
///
/// let (triangles, cycle) = build_objective_pair();
/// let (g1, g2) = (build_graph(&triangles), build_graph(&cycle));
///
/// let result = run_wl(&g1);
/// assert_eq!(result.rounds, 1);
/// assert_eq!(result.stable.class_palette_counts(), (1, 2, 1));
///
/// // Different optima, yet refinement cannot tell the graphs apart.
/// assert!(!separates(&g1, &g2));
/// ```
pub fn run_wl(g: &TripartiteGraph) -> WlResult {
    run_wl_with(g, 0.0)
}

pub fn run_wl_with(g: &TripartiteGraph, feature_tol: f64) -> WlResult {
    let mut coloring = initial_coloring(g, feature_tol);
    let mut history = vec![coloring.palette_size];
    let mut rounds = 0;
    if g.total_nodes() == 0 {
        return WlResult {
            stable: coloring,
            rounds,
            history,
        };
    }
    loop {
        let next = refine_round(g, &coloring, feature_tol);
        rounds += 1;
        history.push(next.palette_size);
        let stable = next.palette_size == coloring.palette_size;
        coloring = next;
        if stable || rounds > g.total_nodes() {
            break;
        }
    }
    WlResult {
        stable: coloring,
        rounds,
        history,
    }
}

/// Concatenates two graphs into one, offsetting the second graph's indices.
pub fn disjoint_union(g1: &TripartiteGraph, g2: &TripartiteGraph) -> TripartiteGraph {
    let var_off = g1.num_vars();
    let quad_off = g1.num_quads();
    let cons_off = g1.num_cons();
    let shift = |edges: &[Edge], da: usize, db: usize| -> Vec<Edge> {
        edges
            .iter()
            .map(|e| Edge {
                a: e.a + da,
                b: e.b + db,
                weight: e.weight,
            })
            .collect()
    };
    let mut union = g1.clone();
    union.var_nodes.extend_from_slice(&g2.var_nodes);
    union.quad_nodes.extend_from_slice(&g2.quad_nodes);
    union.cons_nodes.extend_from_slice(&g2.cons_nodes);
    union.e12.extend(shift(&g2.e12, var_off, quad_off));
    union.e13.extend(shift(&g2.e13, var_off, cons_off));
    union.e23.extend(shift(&g2.e23, quad_off, cons_off));
    union
}

/// Stable colors of both sides of a joint refinement run.
fn joint_stable(g1: &TripartiteGraph, g2: &TripartiteGraph) -> (Coloring, Coloring) {
    let union = disjoint_union(g1, g2);
    let result = run_wl(&union);
    let split = |colors: &[u32], at: usize| -> (Vec<u32>, Vec<u32>) {
        (colors[..at].to_vec(), colors[at..].to_vec())
    };
    let (var1, var2) = split(&result.stable.var_colors, g1.num_vars());
    let (quad1, quad2) = split(&result.stable.quad_colors, g1.num_quads());
    let (cons1, cons2) = split(&result.stable.cons_colors, g1.num_cons());
    (
        Coloring {
            var_colors: var1,
            quad_colors: quad1,
            cons_colors: cons1,
            palette_size: result.stable.palette_size,
        },
        Coloring {
            var_colors: var2,
            quad_colors: quad2,
            cons_colors: cons2,
            palette_size: result.stable.palette_size,
        },
    )
}

fn sorted(colors: &[u32]) -> Vec<u32> {
    let mut out = colors.to_vec();
    out.sort_unstable();
    out
}

/// True iff the per-class stable color multisets of the two graphs differ
/// under a joint refinement run.
pub fn separates(g1: &TripartiteGraph, g2: &TripartiteGraph) -> bool {
    let (c1, c2) = joint_stable(g1, g2);
    sorted(&c1.var_colors) != sorted(&c2.var_colors)
        || sorted(&c1.quad_colors) != sorted(&c2.quad_colors)
        || sorted(&c1.cons_colors) != sorted(&c2.cons_colors)
}

/// Pairs the variables of two non-separated graphs color class by color
/// class (greedily, ascending index within a class). Returns `None` when the
/// class sizes do not match.
pub fn node_correspondence(
    g1: &TripartiteGraph,
    g2: &TripartiteGraph,
) -> Option<NodeCorrespondence> {
    let (c1, c2) = joint_stable(g1, g2);
    let mut by_color_src: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, &color) in c1.var_colors.iter().enumerate() {
        by_color_src.entry(color).or_default().push(j);
    }
    let mut by_color_dst: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, &color) in c2.var_colors.iter().enumerate() {
        by_color_dst.entry(color).or_default().push(j);
    }
    if by_color_src.len() != by_color_dst.len() {
        return None;
    }
    let mut pairs = Vec::with_capacity(c1.var_colors.len());
    for (color, src_members) in &by_color_src {
        let dst_members = by_color_dst.get(color)?;
        if dst_members.len() != src_members.len() {
            return None;
        }
        pairs.extend(src_members.iter().copied().zip(dst_members.iter().copied()));
    }
    pairs.sort_unstable();
    Some(NodeCorrespondence {
        pairs,
        src_var_colors: c1.var_colors,
        dst_var_colors: c2.var_colors,
    })
}

/// Builds the per-color weight-sum table for a stable coloring and verifies
/// that it is well defined: all nodes of one color must agree on their total
/// weight to every other color class, and the aggregate double-counting
/// identity `|G(J)| S(J,K) = |G(K)| S(K,J)` must hold.
pub fn color_sum_table(g: &TripartiteGraph, stable: &Coloring) -> Result<ColorSumTable, WlError> {
    const TOL: f64 = 1e-9;

    let mut class_sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for &color in stable
        .var_colors
        .iter()
        .chain(&stable.quad_colors)
        .chain(&stable.cons_colors)
    {
        *class_sizes.entry(color).or_insert(0) += 1;
    }

    // Global node numbering: variables, then quad terms, then constraints.
    let n = g.num_vars();
    let q = g.num_quads();
    let total = g.total_nodes();
    let node_colors: Vec<u32> = stable
        .var_colors
        .iter()
        .chain(&stable.quad_colors)
        .chain(&stable.cons_colors)
        .copied()
        .collect();

    let mut per_node: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); total];
    {
        let mut add = |node: usize, to_color: u32, weight: f64| {
            *per_node[node].entry(to_color).or_insert(0.0) += weight;
        };
        for e in &g.e12 {
            let (a, b) = (e.a, n + e.b);
            add(a, node_colors[b], e.weight);
            add(b, node_colors[a], e.weight);
        }
        for e in &g.e13 {
            let (a, b) = (e.a, n + q + e.b);
            add(a, node_colors[b], e.weight);
            add(b, node_colors[a], e.weight);
        }
        for e in &g.e23 {
            let (a, b) = (n + e.a, n + q + e.b);
            add(a, node_colors[b], e.weight);
            add(b, node_colors[a], e.weight);
        }
    }

    // Collapse per-node sums into per-class values, checking agreement.
    // A node with no edge to some target class contributes a zero sum there.
    let mut grouped: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (node, &color) in node_colors.iter().enumerate() {
        grouped.entry(color).or_default().push(node);
    }
    let mut entries: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (&color, members) in &grouped {
        let mut targets: Vec<u32> = members
            .iter()
            .flat_map(|&node| per_node[node].keys().copied())
            .collect();
        targets.sort_unstable();
        targets.dedup();
        for to_color in targets {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &node in members {
                let v = per_node[node].get(&to_color).copied().unwrap_or(0.0);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > TOL {
                return Err(WlError::WellDefinednessViolation {
                    color,
                    to_color,
                    spread: hi - lo,
                });
            }
            entries.insert((color, to_color), hi);
        }
    }

    for (&(a, b), &s_ab) in &entries {
        let s_ba = entries.get(&(b, a)).copied().unwrap_or(0.0);
        let lhs = class_sizes[&a] as f64 * s_ab;
        let rhs = class_sizes[&b] as f64 * s_ba;
        if (lhs - rhs).abs() > TOL * (1.0 + lhs.abs().max(rhs.abs())) {
            return Err(WlError::DoubleCountingViolation { a, b, lhs, rhs });
        }
    }

    Ok(ColorSumTable {
        entries,
        class_sizes,
    })
}

/// Transfers a point from one instance to a non-separated partner by
/// averaging over stable variable-color classes: the destination variable `j`
/// receives the mean of `x` over the source variables sharing its color.
pub fn average_solution_by_color(
    corr: &NodeCorrespondence,
    x: &[f64],
) -> Result<Vec<f64>, WlError> {
    if x.len() != corr.src_var_colors.len() {
        return Err(WlError::DimensionMismatch {
            expected: corr.src_var_colors.len(),
            got: x.len(),
        });
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (&color, &value) in corr.src_var_colors.iter().zip(x) {
        let entry = sums.entry(color).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
    }
    corr.dst_var_colors
        .iter()
        .map(|color| {
            sums.get(color)
                .map(|&(total, count)| total / count as f64)
                .ok_or(WlError::Separated)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexamples::{build_feasibility_pair, build_objective_pair};
    use crate::graph::{build_graph, permute};
    use crate::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
    use crate::testutil::{random_instance, random_permutation};
    use rand::SeedableRng;

    #[test]
    fn counterexample_graph_initial_palette() {
        let (first, second) = build_objective_pair();
        for inst in [&first, &second] {
            let g = build_graph(inst);
            let coloring = initial_coloring(&g, 0.0);
            assert_eq!(coloring.class_palette_counts(), (1, 2, 1));
        }
    }

    #[test]
    fn all_distinct_features_make_a_discrete_palette() {
        let inst = QcqpInstance::new(
            "distinct",
            SparseSymMatrix::zeros(4),
            vec![1.0, 2.0, 3.0, 4.0],
            vec![],
            vec![Bound::NegInf; 4],
            vec![Bound::PosInf; 4],
        )
        .unwrap();
        let g = build_graph(&inst);
        let coloring = initial_coloring(&g, 0.0);
        assert_eq!(coloring.palette_size as usize, g.total_nodes());
    }

    #[test]
    fn permuted_graphs_share_round_zero_multisets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 5, 2);
            let g = build_graph(&inst);
            let sigma = random_permutation(&mut rng, 5, 2);
            let permuted = permute(&g, &sigma).unwrap();
            let union = disjoint_union(&g, &permuted);
            let coloring = initial_coloring(&union, 0.0);
            let n = g.num_vars();
            assert_eq!(
                sorted(&coloring.var_colors[..n]),
                sorted(&coloring.var_colors[n..])
            );
        }
    }

    #[test]
    fn counterexample_graph_stabilizes_in_one_round() {
        let (first, second) = build_objective_pair();
        for inst in [&first, &second] {
            let g = build_graph(inst);
            let result = run_wl(&g);
            assert_eq!(result.rounds, 1);
            assert_eq!(result.stable.class_palette_counts(), (1, 2, 1));
        }
    }

    #[test]
    fn discrete_coloring_is_a_fixed_point() {
        let inst = QcqpInstance::new(
            "distinct",
            SparseSymMatrix::zeros(3),
            vec![1.0, 2.0, 3.0],
            vec![],
            vec![Bound::NegInf; 3],
            vec![Bound::PosInf; 3],
        )
        .unwrap();
        let g = build_graph(&inst);
        let initial = initial_coloring(&g, 0.0);
        let refined = refine_round(&g, &initial, 0.0);
        assert_eq!(refined.palette_size, initial.palette_size);
        let result = run_wl(&g);
        assert_eq!(result.rounds, 1);
    }

    #[test]
    fn constraint_patterns_split_variables() {
        // Two variables with equal objective data but different constraint
        // coefficients must split in round one.
        let inst = QcqpInstance::new(
            "split",
            SparseSymMatrix::zeros(2),
            vec![1.0, 1.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![1.0, 2.0],
                rhs: -1.0,
            }],
            vec![Bound::NegInf; 2],
            vec![Bound::PosInf; 2],
        )
        .unwrap();
        let g = build_graph(&inst);
        let initial = initial_coloring(&g, 0.0);
        assert_eq!(distinct(&initial.var_colors), 1);
        let refined = refine_round(&g, &initial, 0.0);
        assert_eq!(distinct(&refined.var_colors), 2);
    }

    #[test]
    fn path_lp_with_distinct_coefficients_goes_discrete() {
        let inst = QcqpInstance::new(
            "path",
            SparseSymMatrix::zeros(5),
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![],
            vec![Bound::Finite(0.0); 5],
            vec![Bound::PosInf; 5],
        )
        .unwrap();
        let g = build_graph(&inst);
        let result = run_wl(&g);
        assert!(result.rounds <= 5);
        assert_eq!(distinct(&result.stable.var_colors), 5);
    }

    #[test]
    fn rounds_never_exceed_node_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 6, 3);
            let g = build_graph(&inst);
            let result = run_wl(&g);
            assert!(result.rounds <= g.total_nodes());
            // Palette sizes never decrease.
            for pair in result.history.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
        }
    }

    #[test]
    fn permuted_graphs_are_never_separated() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..15 {
            let inst = random_instance(&mut rng, 5, 2);
            let g = build_graph(&inst);
            let sigma = random_permutation(&mut rng, 5, 2);
            let permuted = permute(&g, &sigma).unwrap();
            assert!(!separates(&g, &permuted));
        }
    }

    #[test]
    fn counterexample_pairs_are_not_separated() {
        let (first, second) = build_objective_pair();
        assert!(!separates(&build_graph(&first), &build_graph(&second)));
        let (first, second) = build_feasibility_pair();
        assert!(!separates(&build_graph(&first), &build_graph(&second)));
    }

    #[test]
    fn objective_coefficient_change_separates() {
        let make = |p0: f64| {
            QcqpInstance::new(
                "lp",
                SparseSymMatrix::zeros(2),
                vec![p0, 2.0],
                vec![],
                vec![Bound::NegInf; 2],
                vec![Bound::PosInf; 2],
            )
            .unwrap()
        };
        let g1 = build_graph(&make(1.0));
        let g2 = build_graph(&make(1.5));
        assert!(separates(&g1, &g2));
    }

    #[test]
    fn correspondence_on_identical_graphs_is_identity_up_to_color() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let inst = random_instance(&mut rng, 5, 2);
        let g = build_graph(&inst);
        let corr = node_correspondence(&g, &g).unwrap();
        // Generic random instances refine to discrete colorings, so the
        // pairing is exactly the identity.
        for &(a, b) in &corr.pairs {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn correspondence_inverts_a_permutation_up_to_color() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let inst = random_instance(&mut rng, 6, 2);
        let g = build_graph(&inst);
        let sigma = random_permutation(&mut rng, 6, 2);
        let permuted = permute(&g, &sigma).unwrap();
        let corr = node_correspondence(&g, &permuted).unwrap();
        for &(src, dst) in &corr.pairs {
            assert_eq!(corr.src_var_colors[src], corr.dst_var_colors[dst]);
        }
    }

    #[test]
    fn counterexample_color_sums_match_hand_count() {
        let (first, _) = build_objective_pair();
        let g = build_graph(&first);
        let result = run_wl(&g);
        let table = color_sum_table(&g, &result.stable).unwrap();

        let var_color = result.stable.var_colors[0];
        let diag_color = result
            .stable
            .quad_colors
            .iter()
            .zip(&g.quad_nodes)
            .find(|(_, q)| q.row == q.col)
            .map(|(&c, _)| c)
            .unwrap();
        let cross_color = result
            .stable
            .quad_colors
            .iter()
            .zip(&g.quad_nodes)
            .find(|(_, q)| q.row != q.col)
            .map(|(&c, _)| c)
            .unwrap();
        // Each variable touches its squared-term node with weight 2 and two
        // cross-term nodes with weight 1 apiece.
        assert_eq!(table.entries[&(var_color, diag_color)], 2.0);
        assert_eq!(table.entries[&(var_color, cross_color)], 2.0);
        assert_eq!(table.class_sizes[&var_color], 6);
        assert_eq!(table.class_sizes[&diag_color], 6);
        assert_eq!(table.class_sizes[&cross_color], 6);
    }

    #[test]
    fn discrete_coloring_sum_table_is_plain_adjacency() {
        let inst = QcqpInstance::new(
            "lp",
            SparseSymMatrix::zeros(2),
            vec![1.0, 2.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![3.0, 4.0],
                rhs: -1.0,
            }],
            vec![Bound::NegInf; 2],
            vec![Bound::PosInf; 2],
        )
        .unwrap();
        let g = build_graph(&inst);
        let result = run_wl(&g);
        let table = color_sum_table(&g, &result.stable).unwrap();
        let cons_color = result.stable.cons_colors[0];
        let var0 = result.stable.var_colors[0];
        let var1 = result.stable.var_colors[1];
        assert_eq!(table.entries[&(var0, cons_color)], 3.0);
        assert_eq!(table.entries[&(var1, cons_color)], 4.0);
        assert_eq!(table.entries[&(cons_color, var0)], 3.0);
    }

    #[test]
    fn double_counting_identity_on_random_graphs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for _ in 0..25 {
            let inst = random_instance(&mut rng, 6, 3);
            let g = build_graph(&inst);
            let result = run_wl(&g);
            // color_sum_table verifies both lemma identities internally.
            color_sum_table(&g, &result.stable).unwrap();
        }
    }

    #[test]
    fn averaging_with_discrete_colors_returns_the_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let inst = random_instance(&mut rng, 5, 2);
        let g = build_graph(&inst);
        let corr = node_correspondence(&g, &g).unwrap();
        let x = vec![0.3, -1.2, 0.9, 0.0, 2.5];
        let averaged = average_solution_by_color(&corr, &x).unwrap();
        assert_eq!(averaged, x);
    }
}
