//! Tripartite graph encoding of a QCQP.
//!
//! Three node classes carry the problem data:
//!
//! * variable nodes, one per variable, with features `(p_j, lower, upper)`;
//! * quadratic-term nodes, one per index pair `(j, k)`, `j <= k`, whose
//!   coefficient is nonzero in the objective or in at least one constraint;
//! * constraint nodes, one per constraint, with the scalar offset `b_i`.
//!
//! Coefficients are stored in "doubled off-diagonal" form: a quadratic-term
//! node for `j < k` carries `2 q_{j,k}` and a diagonal node carries `q_{j,j}`,
//! and the same rule applies to constraint coefficients on the quad-constraint
//! edges. With that convention every quadratic function is recovered as
//! `1/2 * sum over term nodes of coeff * x_j * x_k`, and the variable-side
//! edge weights (1 per endpoint off-diagonal, 2 on the diagonal) are exactly
//! the multiplicities that appear when differentiating `x_j x_k`.
//!
//! The encoding is lossless: [`build_graph`] and [`graph_to_instance`] are
//! mutually inverse on valid inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bound, Constraint, ModelError, QcqpInstance, SparseSymMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("quad node {quad} has wrong variable endpoints")]
    WrongEndpoints { quad: usize },
    #[error("edge ({a}, {b}) has invalid weight {weight}")]
    BadWeight { a: usize, b: usize, weight: f64 },
    #[error("edge references missing node ({a}, {b})")]
    DanglingEdge { a: usize, b: usize },
    #[error("duplicate edge ({a}, {b})")]
    DuplicateEdge { a: usize, b: usize },
    #[error("duplicate quad node for pair ({row}, {col})")]
    DuplicateQuadNode { row: usize, col: usize },
    #[error("quad node {quad} carries no nonzero coefficient anywhere")]
    EmptyQuadNode { quad: usize },
    #[error("permutation size mismatch: expected {expected}, got {got}")]
    PermutationSize { expected: usize, got: usize },
    #[error("permutation is not a bijection")]
    NotBijective,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Variable node features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarNode {
    pub linear: f64,
    pub lower: Bound,
    pub upper: Bound,
}

/// Quadratic-term node for the pair `(row, col)`, `row <= col`, with the
/// objective coefficient in doubled off-diagonal form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadNode {
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

/// Constraint node feature: the constant offset of the constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsNode {
    pub rhs: f64,
}

/// Weighted edge between two node classes; `a` indexes the lower-numbered
/// class of the pair (variables in E12/E13, quad terms in E23).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Tripartite representation of a QCQP, in canonical node order: variables by
/// index, quadratic terms by `(row, col)`, constraints by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripartiteGraph {
    pub var_nodes: Vec<VarNode>,
    pub quad_nodes: Vec<QuadNode>,
    pub cons_nodes: Vec<ConsNode>,
    /// Variable-to-quad edges `(var, quad, weight)`.
    pub e12: Vec<Edge>,
    /// Variable-to-constraint edges `(var, cons, p^i_j)`.
    pub e13: Vec<Edge>,
    /// Quad-to-constraint edges `(quad, cons, weight)`.
    pub e23: Vec<Edge>,
}

impl TripartiteGraph {
    pub fn num_vars(&self) -> usize {
        self.var_nodes.len()
    }

    pub fn num_quads(&self) -> usize {
        self.quad_nodes.len()
    }

    pub fn num_cons(&self) -> usize {
        self.cons_nodes.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.num_vars() + self.num_quads() + self.num_cons()
    }
}

/// Re-indexing of variables and constraints. `var[j]` is the new index of
/// variable `j`, and likewise for constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPermutation {
    var: Vec<usize>,
    cons: Vec<usize>,
}

impl IndexPermutation {
    pub fn new(var: Vec<usize>, cons: Vec<usize>) -> Result<Self, GraphError> {
        if !is_bijection(&var) || !is_bijection(&cons) {
            return Err(GraphError::NotBijective);
        }
        Ok(Self { var, cons })
    }

    pub fn identity(num_vars: usize, num_cons: usize) -> Self {
        Self {
            var: (0..num_vars).collect(),
            cons: (0..num_cons).collect(),
        }
    }

    pub fn var(&self) -> &[usize] {
        &self.var
    }

    pub fn cons(&self) -> &[usize] {
        &self.cons
    }

    pub fn inverse(&self) -> Self {
        Self {
            var: invert(&self.var),
            cons: invert(&self.cons),
        }
    }

    /// Composition `self after other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            var: other.var.iter().map(|&j| self.var[j]).collect(),
            cons: other.cons.iter().map(|&i| self.cons[i]).collect(),
        }
    }
}

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

/// Doubled off-diagonal coefficient for the pair `(row, col)`.
fn doubled(row: usize, col: usize, value: f64) -> f64 {
    if row == col {
        value
    } else {
        2.0 * value
    }
}

/// Builds the tripartite graph of an instance.
///
/// ```
/// use qcqp::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
/// use qcqp::graph::{build_graph, graph_to_instance};
///
/// // minimize x1 x2  subject to  x1^2 + x2^2 <= 1
/// let inst = QcqpInstance::new(
///     "toy",
///     SparseSymMatrix::new(2, vec![(0, 1, 1.0)])?,
///     vec![0.0, 0.0],
///     vec![Constraint {
///         quad: SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)])?,
///         lin: vec![0.0, 0.0],
///         rhs: -1.0,
///     }],
///     vec![Bound::Finite(-1.0); 2],
///     vec![Bound::Finite(1.0); 2],
/// )?;
///
/// let g = build_graph(&inst);
/// // Support pairs: the two squares from the constraint plus the cross term.
/// assert_eq!(g.num_quads(), 3);
/// // Off-diagonal coefficients are doubled on the node...
/// assert_eq!(g.quad_nodes[1].coeff, 2.0);
/// // ...and the encoding inverts exactly.
/// assert_eq!(graph_to_instance(&g)?.objective_quad(), inst.objective_quad());
/// # Ok::<(), Box<dyn std::error::Error>>(())
/// ```
pub fn build_graph(inst: &QcqpInstance) -> TripartiteGraph {
    let n = inst.num_vars();

    let var_nodes: Vec<VarNode> = (0..n)
        .map(|j| VarNode {
            linear: inst.objective_lin()[j],
            lower: inst.lower()[j],
            upper: inst.upper()[j],
        })
        .collect();

    // Support set: pairs with a nonzero coefficient somewhere.
    let mut support: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(row, col, _) in inst.objective_quad().entries() {
        support.insert((row, col));
    }
    for cons in inst.constraints() {
        for &(row, col, _) in cons.quad.entries() {
            support.insert((row, col));
        }
    }

    let quad_nodes: Vec<QuadNode> = support
        .iter()
        .map(|&(row, col)| QuadNode {
            row,
            col,
            coeff: doubled(row, col, inst.objective_quad().get(row, col)),
        })
        .collect();
    let quad_index: std::collections::BTreeMap<(usize, usize), usize> = support
        .iter()
        .enumerate()
        .map(|(idx, &pair)| (pair, idx))
        .collect();

    let cons_nodes: Vec<ConsNode> = inst
        .constraints()
        .iter()
        .map(|cons| ConsNode { rhs: cons.rhs })
        .collect();

    let mut e12 = Vec::new();
    for (idx, node) in quad_nodes.iter().enumerate() {
        if node.row == node.col {
            e12.push(Edge {
                a: node.row,
                b: idx,
                weight: 2.0,
            });
        } else {
            e12.push(Edge {
                a: node.row,
                b: idx,
                weight: 1.0,
            });
            e12.push(Edge {
                a: node.col,
                b: idx,
                weight: 1.0,
            });
        }
    }

    let mut e13 = Vec::new();
    let mut e23 = Vec::new();
    for (i, cons) in inst.constraints().iter().enumerate() {
        for (j, &coeff) in cons.lin.iter().enumerate() {
            if coeff != 0.0 {
                e13.push(Edge {
                    a: j,
                    b: i,
                    weight: coeff,
                });
            }
        }
        for &(row, col, value) in cons.quad.entries() {
            e23.push(Edge {
                a: quad_index[&(row, col)],
                b: i,
                weight: doubled(row, col, value),
            });
        }
    }

    sort_edges(&mut e12, &mut e13, &mut e23);
    TripartiteGraph {
        var_nodes,
        quad_nodes,
        cons_nodes,
        e12,
        e13,
        e23,
    }
}

fn sort_edges(e12: &mut [Edge], e13: &mut [Edge], e23: &mut [Edge]) {
    e12.sort_by_key(|e| (e.b, e.a));
    e13.sort_by_key(|e| (e.b, e.a));
    e23.sort_by_key(|e| (e.b, e.a));
}

/// Inverts [`build_graph`], validating the structural invariants.
pub fn graph_to_instance(g: &TripartiteGraph) -> Result<QcqpInstance, GraphError> {
    let n = g.num_vars();
    let m = g.num_cons();

    let mut seen_pairs = BTreeSet::new();
    for (idx, node) in g.quad_nodes.iter().enumerate() {
        if node.row > node.col || node.col >= n {
            return Err(GraphError::WrongEndpoints { quad: idx });
        }
        if !seen_pairs.insert((node.row, node.col)) {
            return Err(GraphError::DuplicateQuadNode {
                row: node.row,
                col: node.col,
            });
        }
    }

    // Check E12 endpoint structure: one weight-2 edge for diagonal nodes, two
    // weight-1 edges for off-diagonal nodes.
    let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g.num_quads()];
    for edge in &g.e12 {
        if edge.a >= n || edge.b >= g.num_quads() {
            return Err(GraphError::DanglingEdge {
                a: edge.a,
                b: edge.b,
            });
        }
        incident[edge.b].push((edge.a, edge.weight));
    }
    for (idx, node) in g.quad_nodes.iter().enumerate() {
        let mut ends = incident[idx].clone();
        ends.sort_by_key(|&(var, _)| var);
        if node.row == node.col {
            if ends.len() != 1 || ends[0].0 != node.row {
                return Err(GraphError::WrongEndpoints { quad: idx });
            }
            if ends[0].1 != 2.0 {
                return Err(GraphError::BadWeight {
                    a: ends[0].0,
                    b: idx,
                    weight: ends[0].1,
                });
            }
        } else {
            if ends.len() != 2 || ends[0].0 != node.row || ends[1].0 != node.col {
                return Err(GraphError::WrongEndpoints { quad: idx });
            }
            for &(var, weight) in &ends {
                if weight != 1.0 {
                    return Err(GraphError::BadWeight {
                        a: var,
                        b: idx,
                        weight,
                    });
                }
            }
        }
    }

    // Linear constraint coefficients from E13.
    let mut lin = vec![vec![0.0; n]; m];
    let mut seen13 = BTreeSet::new();
    for edge in &g.e13 {
        if edge.a >= n || edge.b >= m {
            return Err(GraphError::DanglingEdge {
                a: edge.a,
                b: edge.b,
            });
        }
        if edge.weight == 0.0 {
            return Err(GraphError::BadWeight {
                a: edge.a,
                b: edge.b,
                weight: 0.0,
            });
        }
        if !seen13.insert((edge.a, edge.b)) {
            return Err(GraphError::DuplicateEdge {
                a: edge.a,
                b: edge.b,
            });
        }
        lin[edge.b][edge.a] = edge.weight;
    }

    // Constraint quadratic coefficients from E23.
    let mut quad_entries: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
    let mut has_cons_coeff = vec![false; g.num_quads()];
    let mut seen23 = BTreeSet::new();
    for edge in &g.e23 {
        if edge.a >= g.num_quads() || edge.b >= m {
            return Err(GraphError::DanglingEdge {
                a: edge.a,
                b: edge.b,
            });
        }
        if edge.weight == 0.0 {
            return Err(GraphError::BadWeight {
                a: edge.a,
                b: edge.b,
                weight: 0.0,
            });
        }
        if !seen23.insert((edge.a, edge.b)) {
            return Err(GraphError::DuplicateEdge {
                a: edge.a,
                b: edge.b,
            });
        }
        let node = &g.quad_nodes[edge.a];
        let value = if node.row == node.col {
            edge.weight
        } else {
            edge.weight / 2.0
        };
        quad_entries[edge.b].push((node.row, node.col, value));
        has_cons_coeff[edge.a] = true;
    }

    // Every quad node must carry a coefficient somewhere (support membership).
    for (idx, node) in g.quad_nodes.iter().enumerate() {
        if node.coeff == 0.0 && !has_cons_coeff[idx] {
            return Err(GraphError::EmptyQuadNode { quad: idx });
        }
    }

    let mut obj_entries = Vec::new();
    for node in &g.quad_nodes {
        if node.coeff != 0.0 {
            let value = if node.row == node.col {
                node.coeff
            } else {
                node.coeff / 2.0
            };
            obj_entries.push((node.row, node.col, value));
        }
    }
    let objective_quad = SparseSymMatrix::new(n, obj_entries)?;

    let constraints = (0..m)
        .map(|i| {
            Ok(Constraint {
                quad: SparseSymMatrix::new(n, quad_entries[i].clone())?,
                lin: lin[i].clone(),
                rhs: g.cons_nodes[i].rhs,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;

    let objective_lin = g.var_nodes.iter().map(|v| v.linear).collect();
    let lower = g.var_nodes.iter().map(|v| v.lower).collect();
    let upper = g.var_nodes.iter().map(|v| v.upper).collect();
    Ok(QcqpInstance::new(
        "from-graph",
        objective_quad,
        objective_lin,
        constraints,
        lower,
        upper,
    )?)
}

/// Applies a re-indexing of variables and constraints, returning the graph in
/// canonical node order.
pub fn permute(g: &TripartiteGraph, perm: &IndexPermutation) -> Result<TripartiteGraph, GraphError> {
    if perm.var.len() != g.num_vars() {
        return Err(GraphError::PermutationSize {
            expected: g.num_vars(),
            got: perm.var.len(),
        });
    }
    if perm.cons.len() != g.num_cons() {
        return Err(GraphError::PermutationSize {
            expected: g.num_cons(),
            got: perm.cons.len(),
        });
    }

    let var_inv = invert(&perm.var);
    let cons_inv = invert(&perm.cons);

    let var_nodes: Vec<VarNode> = var_inv.iter().map(|&old| g.var_nodes[old]).collect();
    let cons_nodes: Vec<ConsNode> = cons_inv.iter().map(|&old| g.cons_nodes[old]).collect();

    // New quad pairs, sorted canonically; remember where each old node went.
    let mut mapped: Vec<(usize, usize, usize)> = g
        .quad_nodes
        .iter()
        .enumerate()
        .map(|(idx, node)| {
            let a = perm.var[node.row];
            let b = perm.var[node.col];
            (a.min(b), a.max(b), idx)
        })
        .collect();
    mapped.sort_by_key(|&(row, col, _)| (row, col));
    let mut old_to_new = vec![0usize; g.num_quads()];
    let quad_nodes: Vec<QuadNode> = mapped
        .iter()
        .enumerate()
        .map(|(new_idx, &(row, col, old_idx))| {
            old_to_new[old_idx] = new_idx;
            QuadNode {
                row,
                col,
                coeff: g.quad_nodes[old_idx].coeff,
            }
        })
        .collect();

    let mut e12: Vec<Edge> = g
        .e12
        .iter()
        .map(|e| Edge {
            a: perm.var[e.a],
            b: old_to_new[e.b],
            weight: e.weight,
        })
        .collect();
    let mut e13: Vec<Edge> = g
        .e13
        .iter()
        .map(|e| Edge {
            a: perm.var[e.a],
            b: perm.cons[e.b],
            weight: e.weight,
        })
        .collect();
    let mut e23: Vec<Edge> = g
        .e23
        .iter()
        .map(|e| Edge {
            a: old_to_new[e.a],
            b: perm.cons[e.b],
            weight: e.weight,
        })
        .collect();
    sort_edges(&mut e12, &mut e13, &mut e23);

    Ok(TripartiteGraph {
        var_nodes,
        quad_nodes,
        cons_nodes,
        e12,
        e13,
        e23,
    })
}

/// Applies the permutation to the instance coefficients directly. Used as an
/// independent cross-check of [`permute`] and for building isomorphic test
/// pairs.
pub fn permute_instance(
    inst: &QcqpInstance,
    perm: &IndexPermutation,
) -> Result<QcqpInstance, GraphError> {
    if perm.var.len() != inst.num_vars() || perm.cons.len() != inst.num_cons() {
        return Err(GraphError::PermutationSize {
            expected: inst.num_vars(),
            got: perm.var.len(),
        });
    }
    let remap = |mat: &SparseSymMatrix| -> Result<SparseSymMatrix, ModelError> {
        let entries = mat
            .entries()
            .iter()
            .map(|&(row, col, value)| {
                let a = perm.var[row];
                let b = perm.var[col];
                (a.min(b), a.max(b), value)
            })
            .collect();
        SparseSymMatrix::new(mat.dim(), entries)
    };

    let n = inst.num_vars();
    let mut objective_lin = vec![0.0; n];
    let mut lower = vec![Bound::NegInf; n];
    let mut upper = vec![Bound::PosInf; n];
    for j in 0..n {
        objective_lin[perm.var[j]] = inst.objective_lin()[j];
        lower[perm.var[j]] = inst.lower()[j];
        upper[perm.var[j]] = inst.upper()[j];
    }

    let mut constraints = vec![None; inst.num_cons()];
    for (i, cons) in inst.constraints().iter().enumerate() {
        let mut lin = vec![0.0; n];
        for j in 0..n {
            lin[perm.var[j]] = cons.lin[j];
        }
        constraints[perm.cons[i]] = Some(Constraint {
            quad: remap(&cons.quad)?,
            lin,
            rhs: cons.rhs,
        });
    }

    Ok(QcqpInstance::new(
        inst.name(),
        remap(inst.objective_quad())?,
        objective_lin,
        constraints.into_iter().map(Option::unwrap).collect(),
        lower,
        upper,
    )?)
}

/// Objective value computed purely from graph features; used to pin down the
/// coefficient convention.
pub fn objective_via_graph(g: &TripartiteGraph, x: &[f64]) -> f64 {
    let quad: f64 = g
        .quad_nodes
        .iter()
        .map(|node| node.coeff * x[node.row] * x[node.col])
        .sum();
    let lin: f64 = g
        .var_nodes
        .iter()
        .zip(x)
        .map(|(node, &xj)| node.linear * xj)
        .sum();
    0.5 * quad + lin
}

/// Constraint value computed purely from graph features.
pub fn constraint_via_graph(g: &TripartiteGraph, cons: usize, x: &[f64]) -> f64 {
    let quad: f64 = g
        .e23
        .iter()
        .filter(|e| e.b == cons)
        .map(|e| {
            let node = &g.quad_nodes[e.a];
            e.weight * x[node.row] * x[node.col]
        })
        .sum();
    let lin: f64 = g
        .e13
        .iter()
        .filter(|e| e.b == cons)
        .map(|e| e.weight * x[e.a])
        .sum();
    0.5 * quad + lin + g.cons_nodes[cons].rhs
}

/// GraphViz DOT rendering: variables as ellipses, quadratic terms as boxes,
/// constraints as diamonds, edge labels carrying weights. Indices are
/// one-based, matching the file-format convention.
pub fn to_dot(g: &TripartiteGraph) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    out.push_str("graph qcqp {\n");
    for (j, node) in g.var_nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "  u{} [shape=ellipse, label=\"x{}\\np={}\"];",
            j + 1,
            j + 1,
            node.linear
        );
    }
    for (idx, node) in g.quad_nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "  v{} [shape=box, label=\"x{}x{}\\nc={}\"];",
            idx + 1,
            node.row + 1,
            node.col + 1,
            node.coeff
        );
    }
    for (i, node) in g.cons_nodes.iter().enumerate() {
        let _ = writeln!(
            out,
            "  c{} [shape=diamond, label=\"g{}\\nb={}\"];",
            i + 1,
            i + 1,
            node.rhs
        );
    }
    for edge in &g.e12 {
        let _ = writeln!(
            out,
            "  u{} -- v{} [label=\"{}\"];",
            edge.a + 1,
            edge.b + 1,
            edge.weight
        );
    }
    for edge in &g.e13 {
        let _ = writeln!(
            out,
            "  u{} -- c{} [label=\"{}\"];",
            edge.a + 1,
            edge.b + 1,
            edge.weight
        );
    }
    for edge in &g.e23 {
        let _ = writeln!(
            out,
            "  v{} -- c{} [label=\"{}\"];",
            edge.a + 1,
            edge.b + 1,
            edge.weight
        );
    }
    out.push_str("}\n");
    out
}

/// JSON inspection document, schema `qcqp-graph-v1`. Node indices inside the
/// edge lists are one-based.
pub fn to_json(g: &TripartiteGraph) -> serde_json::Value {
    let edges = |list: &[Edge]| -> Vec<serde_json::Value> {
        list.iter()
            .map(|e| serde_json::json!([e.a + 1, e.b + 1, e.weight]))
            .collect()
    };
    serde_json::json!({
        "schema": "qcqp-graph-v1",
        "var_nodes": g.var_nodes.iter().map(|v| serde_json::json!({
            "linear": v.linear,
            "lower": v.lower,
            "upper": v.upper,
        })).collect::<Vec<_>>(),
        "quad_nodes": g.quad_nodes.iter().map(|v| serde_json::json!({
            "row": v.row + 1,
            "col": v.col + 1,
            "coeff": v.coeff,
        })).collect::<Vec<_>>(),
        "cons_nodes": g.cons_nodes.iter().map(|c| serde_json::json!({
            "rhs": c.rhs,
        })).collect::<Vec<_>>(),
        "e12": edges(&g.e12),
        "e13": edges(&g.e13),
        "e23": edges(&g.e23),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexamples::build_objective_pair;
    use crate::testutil::{random_instance, random_permutation};
    use rand::SeedableRng;

    #[test]
    fn counterexample_instance_node_counts() {
        let (first, _) = build_objective_pair();
        let g = build_graph(&first);
        assert_eq!(g.num_vars(), 6);
        assert_eq!(g.num_quads(), 12);
        assert_eq!(g.num_cons(), 1);
        // Diagonal pairs come from the ball constraint, cross pairs from the
        // objective.
        let diag = g.quad_nodes.iter().filter(|q| q.row == q.col).count();
        assert_eq!(diag, 6);
    }

    #[test]
    fn pure_lp_has_no_quad_nodes() {
        let inst = QcqpInstance::new(
            "lp",
            SparseSymMatrix::zeros(3),
            vec![1.0, 2.0, 3.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(3),
                lin: vec![1.0, 1.0, 0.0],
                rhs: -1.0,
            }],
            vec![Bound::Finite(0.0); 3],
            vec![Bound::PosInf; 3],
        )
        .unwrap();
        let g = build_graph(&inst);
        assert!(g.quad_nodes.is_empty());
        assert!(g.e12.is_empty());
        assert!(g.e23.is_empty());
        assert_eq!(g.e13.len(), 2);
    }

    #[test]
    fn support_set_matches_brute_force() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4, 3);
            let g = build_graph(&inst);
            let mut expected = Vec::new();
            for j in 0..4 {
                for k in j..4 {
                    let mut total = inst.objective_quad().get(j, k).abs();
                    for cons in inst.constraints() {
                        total += cons.quad.get(j, k).abs();
                    }
                    if total > 0.0 {
                        expected.push((j, k));
                    }
                }
            }
            let got: Vec<(usize, usize)> =
                g.quad_nodes.iter().map(|q| (q.row, q.col)).collect();
            assert_eq!(got, expected);
            let _ = rng.gen_bool(0.5);
        }
    }

    #[test]
    fn round_trip_is_identity() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(0..=3);
            let inst = random_instance(&mut rng, n, m);
            let g = build_graph(&inst);
            let back = graph_to_instance(&g).unwrap();
            assert_eq!(back.objective_quad(), inst.objective_quad());
            assert_eq!(back.objective_lin(), inst.objective_lin());
            assert_eq!(back.constraints(), inst.constraints());
            assert_eq!(back.lower(), inst.lower());
            assert_eq!(back.upper(), inst.upper());
            // And the reverse direction, up to canonical ordering.
            assert_eq!(build_graph(&back), g);
        }
    }

    #[test]
    fn objective_and_constraints_recoverable_from_features() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..=5);
            let m = rng.gen_range(0..=3);
            let inst = random_instance(&mut rng, n, m);
            let g = build_graph(&inst);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let via_graph = objective_via_graph(&g, &x);
            let direct = inst.objective_value(&x).unwrap();
            assert!((via_graph - direct).abs() <= 1e-12);
            let report = inst.evaluate(&x).unwrap();
            for i in 0..m {
                let via = constraint_via_graph(&g, i, &x);
                assert!((via - report.constraint_values[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn permutation_identity_and_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let inst = random_instance(&mut rng, 5, 2);
        let g = build_graph(&inst);

        let id = IndexPermutation::identity(5, 2);
        assert_eq!(permute(&g, &id).unwrap(), g);

        let sigma = random_permutation(&mut rng, 5, 2);
        let permuted = permute(&g, &sigma).unwrap();
        let back = permute(&permuted, &sigma.inverse()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn permute_commutes_with_instance_reindexing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4, 2);
            let g = build_graph(&inst);
            let sigma = random_permutation(&mut rng, 4, 2);
            let via_graph = permute(&g, &sigma).unwrap();
            let via_instance = build_graph(&permute_instance(&inst, &sigma).unwrap());
            assert_eq!(via_graph, via_instance);
        }
    }

    #[test]
    fn permutation_functor_law() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let inst = random_instance(&mut rng, 5, 3);
        let g = build_graph(&inst);
        let sigma = random_permutation(&mut rng, 5, 3);
        let tau = random_permutation(&mut rng, 5, 3);
        let lhs = permute(&g, &sigma.compose(&tau)).unwrap();
        let rhs = permute(&permute(&g, &tau).unwrap(), &sigma).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn swapping_symmetric_variables_fixes_the_graph() {
        // min x1^2 + x2^2 with identical bounds: swapping the two variables is
        // an automorphism.
        let quad = SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)]).unwrap();
        let inst = QcqpInstance::new(
            "sym",
            quad,
            vec![0.0, 0.0],
            vec![],
            vec![Bound::Finite(-1.0); 2],
            vec![Bound::Finite(1.0); 2],
        )
        .unwrap();
        let g = build_graph(&inst);
        let swap = IndexPermutation::new(vec![1, 0], vec![]).unwrap();
        assert_eq!(permute(&g, &swap).unwrap(), g);
    }

    #[test]
    fn malformed_graphs_are_rejected() {
        let (first, _) = build_objective_pair();
        let mut g = build_graph(&first);
        g.e12[0].weight = 3.0;
        assert!(matches!(
            graph_to_instance(&g),
            Err(GraphError::BadWeight { .. })
        ));

        let mut g = build_graph(&first);
        g.e13.push(Edge {
            a: 0,
            b: 7,
            weight: 1.0,
        });
        assert!(matches!(
            graph_to_instance(&g),
            Err(GraphError::DanglingEdge { .. })
        ));

        let mut g = build_graph(&first);
        g.quad_nodes[0].coeff = 0.0;
        g.e23.retain(|e| e.a != 0);
        assert!(matches!(
            graph_to_instance(&g),
            Err(GraphError::EmptyQuadNode { .. })
        ));
    }

    #[test]
    fn dot_and_json_exports_mention_every_node() {
        let (first, _) = build_objective_pair();
        let g = build_graph(&first);
        let dot = to_dot(&g);
        assert!(dot.contains("u6"));
        assert!(dot.contains("v12"));
        assert!(dot.contains("c1"));
        let json = to_json(&g);
        assert_eq!(json["schema"], "qcqp-graph-v1");
        assert_eq!(json["quad_nodes"].as_array().unwrap().len(), 12);
    }
}
