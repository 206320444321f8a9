//! Dense symmetric eigenvalue machinery: convexity checks and the
//! eigenvalue-shift convexification.
//!
//! Eigenvalues come from a cyclic Jacobi sweep over the dense symmetric
//! completion. That is ample at desk scale and keeps the routine free of
//! external factorization backends, so it can double as an independent
//! oracle for optimal-value checks elsewhere in the crate.

use crate::model::{ModelError, QcqpInstance, SparseSymMatrix};

/// Matrices larger than this are rejected rather than densified.
pub const DENSE_DIM_LIMIT: usize = 512;

const MAX_SWEEPS: usize = 64;

/// All eigenvalues of the symmetric completion, ascending.
pub fn symmetric_eigenvalues(mat: &SparseSymMatrix) -> Result<Vec<f64>, ModelError> {
    let dim = mat.dim();
    if dim == 0 {
        return Err(ModelError::Empty);
    }
    if dim > DENSE_DIM_LIMIT {
        return Err(ModelError::TooLarge {
            dim,
            limit: DENSE_DIM_LIMIT,
        });
    }
    let mut a = mat.to_dense();
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(vec![0.0; dim]);
    }

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-14 * scale * dim as f64 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // Classic Jacobi rotation annihilating a[(p, q)].
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eigs: Vec<f64> = (0..dim).map(|k| a[(k, k)]).collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Smallest eigenvalue of the symmetric completion.
pub fn min_eigenvalue(mat: &SparseSymMatrix) -> Result<f64, ModelError> {
    Ok(symmetric_eigenvalues(mat)?[0])
}

/// True iff the objective matrix and every constraint matrix have smallest
/// eigenvalue at least `-tol`.
pub fn check_convexity(inst: &QcqpInstance, tol: f64) -> Result<bool, ModelError> {
    if min_eigenvalue(inst.objective_quad())? < -tol {
        return Ok(false);
    }
    for cons in inst.constraints() {
        if min_eigenvalue(&cons.quad)? < -tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Shifts each indefinite quadratic matrix by its most negative eigenvalue,
/// `M - alpha I`, leaving already-PSD matrices untouched.
pub fn convexify(inst: &QcqpInstance) -> Result<QcqpInstance, ModelError> {
    let objective_quad = shift_to_psd(inst.objective_quad())?;
    let constraint_quads = inst
        .constraints()
        .iter()
        .map(|cons| shift_to_psd(&cons.quad))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(inst.replace_matrices(objective_quad, constraint_quads))
}

fn shift_to_psd(mat: &SparseSymMatrix) -> Result<SparseSymMatrix, ModelError> {
    let alpha = min_eigenvalue(mat)?;
    if alpha < 0.0 {
        Ok(mat.shift_diagonal(-alpha))
    } else {
        Ok(mat.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bound, Constraint};

    fn eye(dim: usize) -> SparseSymMatrix {
        SparseSymMatrix::new(dim, (0..dim).map(|j| (j, j, 1.0)).collect()).unwrap()
    }

    /// Oracle for random cross-checks: nalgebra's independent symmetric
    /// eigendecomposition.
    fn nalgebra_min_eig(mat: &SparseSymMatrix) -> f64 {
        let eig = mat.to_dense().symmetric_eigen();
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn identity_min_eigenvalue() {
        assert!((min_eigenvalue(&eye(3)).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn off_diagonal_pair_has_eigenvalues_plus_minus_one() {
        let mat = SparseSymMatrix::new(2, vec![(0, 1, 1.0)]).unwrap();
        let eigs = symmetric_eigenvalues(&mat).unwrap();
        assert!((eigs[0] + 1.0).abs() <= 1e-12);
        assert!((eigs[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn half_cycle_adjacency_min_eigenvalue() {
        // Adjacency of the 6-cycle scaled by one half: spectrum cos(pi k / 3),
        // minimum -1.
        let mut entries = Vec::new();
        for j in 0..6usize {
            let k = (j + 1) % 6;
            let (a, b) = (j.min(k), j.max(k));
            entries.push((a, b, 0.5));
        }
        entries.sort_by_key(|&(a, b, _)| (a, b));
        let mat = SparseSymMatrix::new(6, entries).unwrap();
        let got = min_eigenvalue(&mat).unwrap();
        assert!((got + 1.0).abs() <= 1e-9, "got {got}");
        assert!((got - nalgebra_min_eig(&mat)).abs() <= 1e-9);
    }

    #[test]
    fn random_matrices_match_nalgebra() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=12);
            let mut entries = Vec::new();
            for j in 0..dim {
                for k in j..dim {
                    if rng.gen_bool(0.7) {
                        entries.push((j, k, rng.gen_range(-3.0..3.0)));
                    }
                }
            }
            entries.retain(|&(_, _, v)| v != 0.0);
            let mat = SparseSymMatrix::new(dim, entries).unwrap();
            let got = min_eigenvalue(&mat).unwrap();
            let want = nalgebra_min_eig(&mat);
            let scale = 1.0 + want.abs();
            assert!(
                (got - want).abs() <= 1e-9 * scale,
                "dim {dim}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn lp_counts_as_convex() {
        let inst = QcqpInstance::new(
            "lp",
            SparseSymMatrix::zeros(2),
            vec![1.0, -1.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![1.0, 1.0],
                rhs: -1.0,
            }],
            vec![Bound::NegInf; 2],
            vec![Bound::PosInf; 2],
        )
        .unwrap();
        assert!(check_convexity(&inst, 0.0).unwrap());
    }

    #[test]
    fn convexify_shifts_indefinite_objective() {
        let quad = SparseSymMatrix::new(2, vec![(0, 1, 1.0)]).unwrap();
        let inst = QcqpInstance::new(
            "indef",
            quad,
            vec![0.0, 0.0],
            vec![],
            vec![Bound::NegInf; 2],
            vec![Bound::PosInf; 2],
        )
        .unwrap();
        assert!(!check_convexity(&inst, 1e-12).unwrap());
        let fixed = convexify(&inst).unwrap();
        // alpha = -1, so the result is the all-ones matrix.
        assert!((fixed.objective_quad().get(0, 0) - 1.0).abs() <= 1e-12);
        assert!((fixed.objective_quad().get(1, 1) - 1.0).abs() <= 1e-12);
        assert!((fixed.objective_quad().get(0, 1) - 1.0).abs() <= 1e-12);
        assert!(check_convexity(&fixed, 1e-8).unwrap());
        let shifted_min = min_eigenvalue(fixed.objective_quad()).unwrap();
        assert!((-1e-8..=1e-6).contains(&shifted_min));
    }

    #[test]
    fn convexify_is_idempotent_and_keeps_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dim = rng.gen_range(1..=6);
            let mut entries = Vec::new();
            for j in 0..dim {
                for k in j..dim {
                    if rng.gen_bool(0.7) {
                        entries.push((j, k, rng.gen_range(-2.0..2.0)));
                    }
                }
            }
            entries.retain(|&(_, _, v)| v != 0.0);
            let inst = QcqpInstance::new(
                "idem",
                SparseSymMatrix::new(dim, entries).unwrap(),
                vec![0.0; dim],
                vec![],
                vec![Bound::NegInf; dim],
                vec![Bound::PosInf; dim],
            )
            .unwrap();
            let once = convexify(&inst).unwrap();
            let twice = convexify(&once).unwrap();
            for j in 0..dim {
                for k in j..dim {
                    let a = once.objective_quad().get(j, k);
                    let b = twice.objective_quad().get(j, k);
                    assert!((a - b).abs() <= 1e-9, "entry ({j},{k}): {a} vs {b}");
                }
            }
        }

        let psd = eye(3);
        let inst = QcqpInstance::new(
            "psd",
            psd.clone(),
            vec![0.0; 3],
            vec![],
            vec![Bound::NegInf; 3],
            vec![Bound::PosInf; 3],
        )
        .unwrap();
        assert_eq!(convexify(&inst).unwrap().objective_quad(), &psd);
    }

    #[test]
    fn size_limit_is_enforced() {
        let big = SparseSymMatrix::zeros(DENSE_DIM_LIMIT + 1);
        assert!(matches!(
            min_eigenvalue(&big),
            Err(ModelError::TooLarge { .. })
        ));
    }
}
