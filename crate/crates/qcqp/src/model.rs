//! Core data model for quadratically constrained quadratic programs.
//!
//! A problem is stored in minimization form:
//!
//! ```text
//! minimize    1/2 x' Q x + p' x
//! subject to  1/2 x' Q_i x + p_i' x + b_i <= 0    for i in 1..=m
//!             lower <= x <= upper
//! ```
//!
//! Quadratic matrices are kept as sparse upper triangles with an implied
//! symmetric completion, so every coefficient has exactly one storage slot.
//! All indices are zero-based in memory; file formats convert at the I/O
//! boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or evaluating problem data.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix entry ({row}, {col}) out of range for dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("matrix entry ({row}, {col}) stored in the lower triangle")]
    LowerTriangleEntry { row: usize, col: usize },
    #[error("duplicate matrix entry ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("explicit zero stored at ({row}, {col})")]
    StoredZero { row: usize, col: usize },
    #[error("variable {index}: lower bound {lower} exceeds upper bound {upper}")]
    BoundOrder { index: usize, lower: f64, upper: f64 },
    #[error("matrix dimension {dim} exceeds the dense-algebra limit {limit}")]
    TooLarge { dim: usize, limit: usize },
    #[error("problem must have at least one variable")]
    Empty,
}

/// One side of a variable box bound.
///
/// Infinite bounds never participate in arithmetic; code that needs a numeric
/// value must branch on the variant first. In JSON a bound is either a plain
/// number or one of the strings `"-inf"` / `"+inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Serialize for Bound {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Bound::NegInf => serializer.serialize_str("-inf"),
            Bound::PosInf => serializer.serialize_str("+inf"),
            Bound::Finite(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BoundVisitor;
        impl serde::de::Visitor<'_> for BoundVisitor {
            type Value = Bound;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"-inf\"/\"+inf\"")
            }

            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Bound, E> {
                Ok(Bound::Finite(v))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Bound, E> {
                Ok(Bound::Finite(v as f64))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Bound, E> {
                Ok(Bound::Finite(v as f64))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Bound, E> {
                match v {
                    "-inf" => Ok(Bound::NegInf),
                    "+inf" | "inf" => Ok(Bound::PosInf),
                    other => Err(E::custom(format!("unknown bound string {other:?}"))),
                }
            }
        }
        deserializer.deserialize_any(BoundVisitor)
    }
}

impl Bound {
    pub fn is_finite(self) -> bool {
        matches!(self, Bound::Finite(_))
    }

    /// Finite value, if any.
    pub fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// `(value, indicator)` encoding: indicator is -1/0/+1 for -inf/finite/+inf
    /// and the value slot is zero when infinite.
    pub fn encoding(self) -> (f64, f64) {
        match self {
            Bound::NegInf => (0.0, -1.0),
            Bound::Finite(v) => (v, 0.0),
            Bound::PosInf => (0.0, 1.0),
        }
    }
}

/// Sparse symmetric matrix stored as its strict-or-diagonal upper triangle.
///
/// Entries are kept sorted by `(row, col)` with `row <= col`, without
/// duplicates or explicit zeros, so structural equality of two matrices is
/// plain `==`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSymMatrix {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSymMatrix {
    /// Builds a matrix from upper-triangle entries, validating the storage
    /// invariants.
    pub fn new(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self, ModelError> {
        for &(row, col, value) in &entries {
            if row >= dim || col >= dim {
                return Err(ModelError::IndexOutOfRange { row, col, dim });
            }
            if row > col {
                return Err(ModelError::LowerTriangleEntry { row, col });
            }
            if value == 0.0 {
                return Err(ModelError::StoredZero { row, col });
            }
        }
        entries.sort_by_key(|&(row, col, _)| (row, col));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(ModelError::DuplicateEntry {
                    row: pair[0].0,
                    col: pair[0].1,
                });
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Extracts the upper triangle of a dense matrix, which must be exactly
    /// symmetric.
    pub fn from_dense(dense: &nalgebra::DMatrix<f64>) -> Result<Self, ModelError> {
        let dim = dense.nrows();
        if dense.ncols() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                got: dense.ncols(),
            });
        }
        let mut entries = Vec::new();
        for row in 0..dim {
            for col in row..dim {
                if dense[(row, col)] != dense[(col, row)] {
                    return Err(ModelError::LowerTriangleEntry { row: col, col: row });
                }
                if dense[(row, col)] != 0.0 {
                    entries.push((row, col, dense[(row, col)]));
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted upper-triangle entries `(row, col, value)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Coefficient at `(row, col)` under symmetric completion.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let key = if row <= col { (row, col) } else { (col, row) };
        self.entries
            .binary_search_by_key(&key, |&(r, c, _)| (r, c))
            .map(|idx| self.entries[idx].2)
            .unwrap_or(0.0)
    }

    /// `1/2 x' M x` with symmetric completion.
    pub fn half_quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(row, col, value) in &self.entries {
            if row == col {
                acc += 0.5 * value * x[row] * x[row];
            } else {
                acc += value * x[row] * x[col];
            }
        }
        acc
    }

    /// Matrix-vector product `M x` with symmetric completion.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(row, col, value) in &self.entries {
            out[row] += value * x[col];
            if row != col {
                out[col] += value * x[row];
            }
        }
        out
    }

    /// Adds `M x` scaled by `factor` into `out`.
    pub fn mul_vec_into(&self, x: &[f64], factor: f64, out: &mut [f64]) {
        for &(row, col, value) in &self.entries {
            out[row] += factor * value * x[col];
            if row != col {
                out[col] += factor * value * x[row];
            }
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut dense = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(row, col, value) in &self.entries {
            dense[(row, col)] = value;
            dense[(col, row)] = value;
        }
        dense
    }

    /// Adds `shift` to every diagonal entry, creating or removing stored
    /// entries as needed.
    pub fn shift_diagonal(&self, shift: f64) -> Self {
        if shift == 0.0 {
            return self.clone();
        }
        let mut entries = Vec::with_capacity(self.entries.len() + self.dim);
        let mut seen_diag = vec![false; self.dim];
        for &(row, col, value) in &self.entries {
            if row == col {
                seen_diag[row] = true;
                let shifted = value + shift;
                if shifted != 0.0 {
                    entries.push((row, col, shifted));
                }
            } else {
                entries.push((row, col, value));
            }
        }
        for (idx, seen) in seen_diag.iter().enumerate() {
            if !seen {
                entries.push((idx, idx, shift));
            }
        }
        entries.sort_by_key(|&(row, col, _)| (row, col));
        Self {
            dim: self.dim,
            entries,
        }
    }

    /// Applies `f` to every stored value, keeping the sparsity pattern. The
    /// callback must not return zero.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|&(row, col, value)| {
                let mapped = f(row, col, value);
                debug_assert!(mapped != 0.0, "map_values produced a stored zero");
                (row, col, mapped)
            })
            .collect();
        Self {
            dim: self.dim,
            entries,
        }
    }
}

/// One inequality constraint `1/2 x' Q x + p' x + b <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub quad: SparseSymMatrix,
    pub lin: Vec<f64>,
    pub rhs: f64,
}

impl Constraint {
    /// Constraint function value at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.quad.half_quad_form(x) + dot(&self.lin, x) + self.rhs
    }

    /// Gradient of the constraint function at `x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = self.quad.mul_vec(x);
        for (g, &c) in grad.iter_mut().zip(&self.lin) {
            *g += c;
        }
        grad
    }
}

/// A full QCQP instance in canonical minimization form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpInstance {
    name: String,
    objective_quad: SparseSymMatrix,
    objective_lin: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<Bound>,
    upper: Vec<Bound>,
}

/// Point evaluation summary produced by [`QcqpInstance::evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub objective: f64,
    /// Constraint function values `g_i(x)`; nonpositive means satisfied.
    pub constraint_values: Vec<f64>,
    /// Largest componentwise box-bound breach, zero when inside the box.
    pub bound_violation: f64,
    /// `max_i g_i(x)`, or zero when there are no constraints.
    pub max_constraint_violation: f64,
}

impl QcqpInstance {
    pub fn new(
        name: impl Into<String>,
        objective_quad: SparseSymMatrix,
        objective_lin: Vec<f64>,
        constraints: Vec<Constraint>,
        lower: Vec<Bound>,
        upper: Vec<Bound>,
    ) -> Result<Self, ModelError> {
        let n = objective_lin.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        check_dim(objective_quad.dim(), n)?;
        check_dim(lower.len(), n)?;
        check_dim(upper.len(), n)?;
        for cons in &constraints {
            check_dim(cons.quad.dim(), n)?;
            check_dim(cons.lin.len(), n)?;
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if let (Bound::Finite(lo), Bound::Finite(hi)) = (lo, hi) {
                if lo > hi {
                    return Err(ModelError::BoundOrder {
                        index,
                        lower: lo,
                        upper: hi,
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            objective_quad,
            objective_lin,
            constraints,
            lower,
            upper,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Number of variables.
    pub fn num_vars(&self) -> usize {
        self.objective_lin.len()
    }

    /// Number of canonical constraint records.
    pub fn num_cons(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_quad(&self) -> &SparseSymMatrix {
        &self.objective_quad
    }

    pub fn objective_lin(&self) -> &[f64] {
        &self.objective_lin
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn lower(&self) -> &[Bound] {
        &self.lower
    }

    pub fn upper(&self) -> &[Bound] {
        &self.upper
    }

    /// Replaces the quadratic matrices, keeping everything else. Used by the
    /// convexification pass; dimensions must match.
    pub(crate) fn replace_matrices(
        &self,
        objective_quad: SparseSymMatrix,
        constraint_quads: Vec<SparseSymMatrix>,
    ) -> Self {
        debug_assert_eq!(objective_quad.dim(), self.num_vars());
        debug_assert_eq!(constraint_quads.len(), self.num_cons());
        let constraints = self
            .constraints
            .iter()
            .zip(constraint_quads)
            .map(|(cons, quad)| Constraint {
                quad,
                lin: cons.lin.clone(),
                rhs: cons.rhs,
            })
            .collect();
        Self {
            name: self.name.clone(),
            objective_quad,
            objective_lin: self.objective_lin.clone(),
            constraints,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// Objective value `1/2 x' Q x + p' x`.
    pub fn objective_value(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(x.len(), self.num_vars())?;
        Ok(self.objective_quad.half_quad_form(x) + dot(&self.objective_lin, x))
    }

    /// Objective gradient `Q x + p`.
    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = self.objective_quad.mul_vec(x);
        for (g, &c) in grad.iter_mut().zip(&self.objective_lin) {
            *g += c;
        }
        grad
    }

    /// Evaluates objective, constraint values, and bound violations at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<EvalReport, ModelError> {
        check_dim(x.len(), self.num_vars())?;
        let objective = self.objective_quad.half_quad_form(x) + dot(&self.objective_lin, x);
        let constraint_values: Vec<f64> = self.constraints.iter().map(|c| c.value(x)).collect();
        // Maximum constraint value, which may be negative; zero for m = 0.
        let max_constraint_violation = if constraint_values.is_empty() {
            0.0
        } else {
            constraint_values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut bound_violation = 0.0f64;
        for (j, &xj) in x.iter().enumerate() {
            if let Bound::Finite(lo) = self.lower[j] {
                bound_violation = bound_violation.max(lo - xj);
            }
            if let Bound::Finite(hi) = self.upper[j] {
                bound_violation = bound_violation.max(xj - hi);
            }
        }
        Ok(EvalReport {
            objective,
            constraint_values,
            bound_violation,
            max_constraint_violation,
        })
    }

    /// True iff every constraint and bound holds within `tol`.
    pub fn is_feasible_point(&self, x: &[f64], tol: f64) -> Result<bool, ModelError> {
        let report = self.evaluate(x)?;
        Ok(report.max_constraint_violation <= tol && report.bound_violation <= tol)
    }
}

fn check_dim(got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent dense oracle: full double loop over the completed matrix.
    fn dense_objective(quad: &SparseSymMatrix, lin: &[f64], x: &[f64]) -> f64 {
        let dense = quad.to_dense();
        let n = x.len();
        let mut acc = 0.0;
        for j in 0..n {
            for k in 0..n {
                acc += 0.5 * dense[(j, k)] * x[j] * x[k];
            }
            acc += lin[j] * x[j];
        }
        acc
    }

    fn free_bounds(n: usize) -> (Vec<Bound>, Vec<Bound>) {
        (vec![Bound::NegInf; n], vec![Bound::PosInf; n])
    }

    #[test]
    fn zero_problem_objective_is_zero() {
        let (lo, hi) = free_bounds(3);
        let inst = QcqpInstance::new(
            "zero",
            SparseSymMatrix::zeros(3),
            vec![0.0; 3],
            vec![],
            lo,
            hi,
        )
        .unwrap();
        assert_eq!(inst.objective_value(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_objective() {
        let quad = SparseSymMatrix::new(1, vec![(0, 0, 2.0)]).unwrap();
        let inst = QcqpInstance::new(
            "1d",
            quad,
            vec![3.0],
            vec![],
            vec![Bound::NegInf],
            vec![Bound::PosInf],
        )
        .unwrap();
        assert_eq!(inst.objective_value(&[1.0]).unwrap(), 4.0);
    }

    #[test]
    fn random_objective_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(1..=8);
            let mut entries = Vec::new();
            for j in 0..n {
                for k in j..n {
                    if rng.gen_bool(0.6) {
                        entries.push((j, k, rng.gen_range(-2.0..2.0)));
                    }
                }
            }
            entries.retain(|&(_, _, v)| v != 0.0);
            let quad = SparseSymMatrix::new(n, entries).unwrap();
            let lin: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (lo, hi) = free_bounds(n);
            let inst = QcqpInstance::new("rand", quad, lin, vec![], lo, hi).unwrap();
            let got = inst.objective_value(&x).unwrap();
            let want = dense_objective(inst.objective_quad(), inst.objective_lin(), &x);
            assert!((got - want).abs() <= 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn random_constraints_match_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=3);
            let mut constraints = Vec::new();
            for _ in 0..m {
                let mut entries = Vec::new();
                for j in 0..n {
                    for k in j..n {
                        if rng.gen_bool(0.5) {
                            entries.push((j, k, rng.gen_range(-2.0..2.0)));
                        }
                    }
                }
                entries.retain(|&(_, _, v)| v != 0.0);
                constraints.push(Constraint {
                    quad: SparseSymMatrix::new(n, entries).unwrap(),
                    lin: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    rhs: rng.gen_range(-2.0..2.0),
                });
            }
            let (lo, hi) = free_bounds(n);
            let inst =
                QcqpInstance::new("rand", SparseSymMatrix::zeros(n), vec![0.0; n], constraints, lo, hi)
                    .unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let report = inst.evaluate(&x).unwrap();
            for (i, cons) in inst.constraints().iter().enumerate() {
                let want = dense_objective(&cons.quad, &cons.lin, &x) + cons.rhs;
                assert!((report.constraint_values[i] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unconstrained_report_is_clean() {
        let (lo, hi) = free_bounds(2);
        let inst = QcqpInstance::new(
            "free",
            SparseSymMatrix::zeros(2),
            vec![0.0, 0.0],
            vec![],
            lo,
            hi,
        )
        .unwrap();
        let report = inst.evaluate(&[5.0, -5.0]).unwrap();
        assert!(report.constraint_values.is_empty());
        assert_eq!(report.bound_violation, 0.0);
        assert_eq!(report.max_constraint_violation, 0.0);
    }

    #[test]
    fn bound_violation_ignores_infinite_sides() {
        let inst = QcqpInstance::new(
            "box",
            SparseSymMatrix::zeros(2),
            vec![0.0, 0.0],
            vec![],
            vec![Bound::Finite(0.0), Bound::NegInf],
            vec![Bound::PosInf, Bound::Finite(1.0)],
        )
        .unwrap();
        let report = inst.evaluate(&[-0.5, 3.0]).unwrap();
        assert_eq!(report.bound_violation, 2.0);
        let report = inst.evaluate(&[10.0, -100.0]).unwrap();
        assert_eq!(report.bound_violation, 0.0);
    }

    #[test]
    fn symmetric_lookup_and_dimension_errors() {
        let quad = SparseSymMatrix::new(3, vec![(0, 2, 4.0)]).unwrap();
        assert_eq!(quad.get(2, 0), 4.0);
        assert_eq!(quad.get(0, 2), 4.0);
        assert_eq!(quad.get(1, 1), 0.0);

        assert_eq!(
            SparseSymMatrix::new(2, vec![(1, 0, 1.0)]),
            Err(ModelError::LowerTriangleEntry { row: 1, col: 0 })
        );
        assert_eq!(
            SparseSymMatrix::new(2, vec![(0, 1, 1.0), (0, 1, 2.0)]),
            Err(ModelError::DuplicateEntry { row: 0, col: 1 })
        );
        assert_eq!(
            SparseSymMatrix::new(2, vec![(0, 1, 0.0)]),
            Err(ModelError::StoredZero { row: 0, col: 1 })
        );

        let (lo, hi) = free_bounds(2);
        let inst = QcqpInstance::new(
            "dim",
            SparseSymMatrix::zeros(2),
            vec![0.0, 0.0],
            vec![],
            lo,
            hi,
        )
        .unwrap();
        assert!(matches!(
            inst.objective_value(&[1.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bound_order_is_validated() {
        let err = QcqpInstance::new(
            "bad",
            SparseSymMatrix::zeros(1),
            vec![0.0],
            vec![],
            vec![Bound::Finite(1.0)],
            vec![Bound::Finite(0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::BoundOrder { .. }));
    }

    #[test]
    fn shift_diagonal_creates_and_cancels_entries() {
        let quad = SparseSymMatrix::new(2, vec![(0, 0, -1.0), (0, 1, 3.0)]).unwrap();
        let shifted = quad.shift_diagonal(1.0);
        // (0,0) cancels to zero and is dropped; (1,1) appears.
        assert_eq!(shifted.get(0, 0), 0.0);
        assert_eq!(shifted.get(1, 1), 1.0);
        assert_eq!(shifted.get(0, 1), 3.0);
        assert_eq!(shifted.nnz(), 2);
    }
}
