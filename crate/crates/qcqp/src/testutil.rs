//! Random fixtures shared by unit, property, and acceptance tests.

#![doc(hidden)]

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::IndexPermutation;
use crate::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};

/// Random instance with arbitrary (possibly indefinite) quadratic parts and a
/// mix of finite and infinite bounds.
pub fn random_instance(rng: &mut impl Rng, n: usize, m: usize) -> QcqpInstance {
    let quad = random_matrix(rng, n, 0.6);
    let lin: Vec<f64> = (0..n).map(|_| round3(rng.gen_range(-2.0..2.0))).collect();
    let constraints = (0..m)
        .map(|_| Constraint {
            quad: random_matrix(rng, n, 0.5),
            lin: (0..n)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        round3(rng.gen_range(-2.0..2.0))
                    } else {
                        0.0
                    }
                })
                .collect(),
            rhs: round3(rng.gen_range(-2.0..2.0)),
        })
        .collect();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for _ in 0..n {
        lower.push(if rng.gen_bool(0.7) {
            Bound::Finite(round3(rng.gen_range(-3.0..0.0)))
        } else {
            Bound::NegInf
        });
        upper.push(if rng.gen_bool(0.7) {
            Bound::Finite(round3(rng.gen_range(0.0..3.0)))
        } else {
            Bound::PosInf
        });
    }
    QcqpInstance::new("random", quad, lin, constraints, lower, upper).unwrap()
}

/// Strictly convex instance with `x = 0` strictly feasible: the objective is
/// `M'M + I`-shaped and every constraint has a negative offset.
pub fn random_convex_instance(rng: &mut impl Rng, n: usize, m: usize) -> QcqpInstance {
    let quad = random_psd_matrix(rng, n, 1.0);
    let lin: Vec<f64> = (0..n).map(|_| round3(rng.gen_range(-1.0..1.0))).collect();
    let constraints = (0..m)
        .map(|_| Constraint {
            quad: random_psd_matrix(rng, n, 0.0),
            lin: (0..n).map(|_| round3(rng.gen_range(-1.0..1.0))).collect(),
            rhs: round3(rng.gen_range(-2.0..-0.5)),
        })
        .collect();
    let lower = (0..n)
        .map(|_| Bound::Finite(round3(rng.gen_range(-4.0..-1.0))))
        .collect();
    let upper = (0..n)
        .map(|_| Bound::Finite(round3(rng.gen_range(1.0..4.0))))
        .collect();
    QcqpInstance::new("convex", quad, lin, constraints, lower, upper).unwrap()
}

/// Random sparse symmetric matrix with entries rounded to three decimals.
pub fn random_matrix(rng: &mut impl Rng, n: usize, density: f64) -> SparseSymMatrix {
    let mut entries = Vec::new();
    for j in 0..n {
        for k in j..n {
            if rng.gen_bool(density) {
                let v = round3(rng.gen_range(-2.0..2.0));
                if v != 0.0 {
                    entries.push((j, k, v));
                }
            }
        }
    }
    SparseSymMatrix::new(n, entries).unwrap()
}

/// Random positive semidefinite matrix in factor form `M'M` plus an optional
/// ridge making it positive definite.
pub fn random_psd_matrix(rng: &mut impl Rng, n: usize, ridge: f64) -> SparseSymMatrix {
    let mut factor = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if rng.gen_bool(0.6) {
                factor[(j, k)] = round3(rng.gen_range(-1.0..1.0));
            }
        }
    }
    let mut dense = factor.transpose() * &factor;
    for j in 0..n {
        dense[(j, j)] += ridge;
    }
    // Re-symmetrize exactly; float products may differ across the diagonal.
    for j in 0..n {
        for k in (j + 1)..n {
            dense[(k, j)] = dense[(j, k)];
        }
    }
    SparseSymMatrix::from_dense(&dense).unwrap()
}

/// Convex instance made of two identical variable blocks with per-block
/// copies of every constraint. Swapping the blocks (variables and
/// constraints together) is an automorphism, so refinement keeps each
/// variable in the same color class as its copy.
pub fn duplicated_convex_instance(rng: &mut impl Rng, half_n: usize, half_m: usize) -> QcqpInstance {
    let base = random_convex_instance(rng, half_n, half_m);
    let n = 2 * half_n;
    let dup_matrix = |mat: &SparseSymMatrix| -> SparseSymMatrix {
        let mut entries = Vec::with_capacity(2 * mat.nnz());
        for &(row, col, value) in mat.entries() {
            entries.push((row, col, value));
            entries.push((row + half_n, col + half_n, value));
        }
        SparseSymMatrix::new(n, entries).unwrap()
    };
    let dup_vec = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        out.extend_from_slice(v);
        out
    };
    let mut constraints = Vec::with_capacity(2 * half_m);
    for block in 0..2 {
        for cons in base.constraints() {
            let mut lin = vec![0.0; n];
            let offset = block * half_n;
            let mut entries = Vec::with_capacity(cons.quad.nnz());
            for &(row, col, value) in cons.quad.entries() {
                entries.push((row + offset, col + offset, value));
            }
            lin[offset..offset + half_n].copy_from_slice(&cons.lin);
            constraints.push(Constraint {
                quad: SparseSymMatrix::new(n, entries).unwrap(),
                lin,
                rhs: cons.rhs,
            });
        }
    }
    QcqpInstance::new(
        "duplicated",
        dup_matrix(base.objective_quad()),
        dup_vec(base.objective_lin()),
        constraints,
        dup_vec_bounds(base.lower()),
        dup_vec_bounds(base.upper()),
    )
    .unwrap()
}

fn dup_vec_bounds(bounds: &[Bound]) -> Vec<Bound> {
    let mut out = bounds.to_vec();
    out.extend_from_slice(bounds);
    out
}

/// A nontrivial strictly feasible point: a random direction from the origin
/// scaled to 80% of the feasibility boundary.
pub fn random_feasible_point(rng: &mut impl Rng, inst: &QcqpInstance) -> Vec<f64> {
    let n = inst.num_vars();
    let direction: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let feasible_at = |t: f64| -> bool {
        let x: Vec<f64> = direction.iter().map(|d| t * d).collect();
        inst.is_feasible_point(&x, 0.0).unwrap_or(false)
    };
    let mut hi = 1.0;
    while feasible_at(hi) && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible_at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    direction.iter().map(|d| 0.8 * lo * d).collect()
}

/// Uniformly random re-indexing of variables and constraints.
pub fn random_permutation(rng: &mut impl Rng, n: usize, m: usize) -> IndexPermutation {
    let mut var: Vec<usize> = (0..n).collect();
    let mut cons: Vec<usize> = (0..m).collect();
    var.shuffle(rng);
    cons.shuffle(rng);
    IndexPermutation::new(var, cons).unwrap()
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}
