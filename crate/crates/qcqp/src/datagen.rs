//! Instance generation: coefficient perturbation around a base instance,
//! convexification, and solver-based labeling, assembled into train/test
//! datasets.
//!
//! Determinism: every sample is a pure function of `(seed, split, attempt)`.
//! Each coefficient draws from its own counter-based stream keyed by the
//! coefficient's address, so the result does not depend on iteration order.
//!
//! The eigenvalue-shift convexification leaves the objective with smallest
//! eigenvalue almost exactly zero. When `reject_nonstrict` is set (the
//! default), such objectives are repaired with a small diagonal ridge instead
//! of being resampled — resampling would reject almost every draw — and the
//! repair count is reported in the generation log. The ridge keeps the
//! optimum unique, which the solution labels rely on.
//!
//! Feasibility datasets need both classes. Perturbations of an
//! interior-feasible base are mostly feasible, so when balancing is on,
//! every other record is tightened: the first constraint's offset is raised
//! above the constraint body's box-minimum (computed with the solver), which
//! provably empties the feasible set. Labels are still produced by phase I,
//! never assumed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::gnn::Task;
use crate::io::dataset::{Dataset, DatasetRecord, Split};
use crate::model::{Bound, Constraint, ModelError, QcqpInstance, SparseSymMatrix};
use crate::solver::{phase1, solve, PhaseOneOutcome, SolveOptions, SolveStatus, SolverError};
use crate::spectral::{convexify, min_eigenvalue};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("solver failure rate above 50% after {attempts} attempts ({failures} failures); last: {last}")]
    TooManyFailures {
        attempts: usize,
        failures: usize,
        last: String,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What to generate.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub base: QcqpInstance,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub tasks: Vec<Task>,
    /// Repair convexified objectives whose smallest eigenvalue is below the
    /// strictness threshold (see module docs).
    pub reject_nonstrict: bool,
    /// Tighten every other sample into certified infeasibility so feasibility
    /// datasets carry both classes.
    pub balance_feasibility: bool,
}

impl GenSpec {
    pub fn new(base: QcqpInstance, n_train: usize, n_test: usize, seed: u64, tasks: Vec<Task>) -> Self {
        let needs_optimum = tasks
            .iter()
            .any(|t| matches!(t, Task::Objective | Task::Solution));
        // Optimum-labeled runs keep only solvable (hence feasible) samples,
        // so class balancing only applies to pure feasibility runs.
        let balance = tasks.contains(&Task::Feasibility) && !needs_optimum;
        Self {
            base,
            n_train,
            n_test,
            seed,
            tasks,
            reject_nonstrict: true,
            balance_feasibility: balance,
        }
    }

    fn needs_optimum(&self) -> bool {
        self.tasks
            .iter()
            .any(|t| matches!(t, Task::Objective | Task::Solution))
    }
}

/// Provenance sidecar for one generation run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GenerationLog {
    pub attempts: usize,
    pub accepted: usize,
    pub solver_rejections: usize,
    pub infeasible_rejections: usize,
    pub strictness_repairs: usize,
    pub tightened_samples: usize,
    /// First few rejection reasons, for diagnostics.
    pub rejection_details: Vec<String>,
}

impl GenerationLog {
    fn note_rejection(&mut self, reason: String) {
        if self.rejection_details.len() < 50 {
            self.rejection_details.push(reason);
        }
    }
}

// --- Deterministic per-coefficient streams ---------------------------------

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn coeff_stream(seed: u64, address: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed) ^ address))
}

fn quad_address(tag: u64, cons: usize, row: usize, col: usize) -> u64 {
    (tag << 56) | ((cons as u64) << 40) | ((row as u64) << 20) | col as u64
}

/// Draws uniform on `(-|a|, |a|)`, redrawing the measure-zero exact zero so
/// the sparsity pattern stays intact.
fn resample(seed: u64, address: u64, magnitude: f64) -> f64 {
    let mut rng = coeff_stream(seed, address);
    let bound = magnitude.abs();
    loop {
        let v = rng.gen_range(-bound..bound);
        if v != 0.0 {
            return v;
        }
    }
}

/// Resamples every stored nonzero coefficient of the base instance from
/// `U(-|a|, |a|)`; zeros, bounds, and the sparsity pattern are preserved.
pub fn perturb(base: &QcqpInstance, seed: u64) -> QcqpInstance {
    let objective_quad = base
        .objective_quad()
        .map_values(|row, col, value| resample(seed, quad_address(1, 0, row, col), value));
    let objective_lin = base
        .objective_lin()
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if v == 0.0 {
                0.0
            } else {
                resample(seed, quad_address(2, 0, 0, j), v)
            }
        })
        .collect();
    let constraints = base
        .constraints()
        .iter()
        .enumerate()
        .map(|(i, cons)| Constraint {
            quad: cons
                .quad
                .map_values(|row, col, value| resample(seed, quad_address(3, i + 1, row, col), value)),
            lin: cons
                .lin
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    if v == 0.0 {
                        0.0
                    } else {
                        resample(seed, quad_address(4, i + 1, 0, j), v)
                    }
                })
                .collect(),
            rhs: if cons.rhs == 0.0 {
                0.0
            } else {
                resample(seed, quad_address(5, i + 1, 0, 0), cons.rhs)
            },
        })
        .collect();
    QcqpInstance::new(
        format!("{}-p{seed:016x}", base.name()),
        objective_quad,
        objective_lin,
        constraints,
        base.lower().to_vec(),
        base.upper().to_vec(),
    )
    .expect("perturbation preserves instance invariants")
}

/// Synthetic base instance: factor-form PSD quadratics, finite unit box, and
/// the origin strictly feasible (`g_i(0) <= -0.1`).
pub fn synth_base(n: usize, m: usize, density: f64, seed: u64) -> QcqpInstance {
    assert!(n >= 1 && m >= 1, "synthetic bases need n, m >= 1");
    assert!(density > 0.0 && density <= 1.0, "density must be in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x5f3759df));

    let psd = |rng: &mut ChaCha8Rng| -> SparseSymMatrix {
        let mut factor = nalgebra::DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                if rng.gen_bool(density) {
                    factor[(a, b)] = rng.gen_range(-0.7..0.7);
                }
            }
        }
        let mut dense = factor.transpose() * &factor;
        for a in 0..n {
            for b in (a + 1)..n {
                dense[(b, a)] = dense[(a, b)];
            }
        }
        SparseSymMatrix::from_dense(&dense).expect("factor product is symmetric")
    };

    let objective_quad = psd(&mut rng);
    let objective_lin = (0..n)
        .map(|_| {
            if rng.gen_bool(density.max(0.5)) {
                rng.gen_range(-0.5..0.5)
            } else {
                0.0
            }
        })
        .collect();
    let constraints = (0..m)
        .map(|_| Constraint {
            quad: psd(&mut rng),
            lin: (0..n)
                .map(|_| {
                    if rng.gen_bool(density.max(0.5)) {
                        rng.gen_range(-0.5..0.5)
                    } else {
                        0.0
                    }
                })
                .collect(),
            rhs: rng.gen_range(-0.6..-0.1),
        })
        .collect();
    QcqpInstance::new(
        format!("synth-{n}x{m}"),
        objective_quad,
        objective_lin,
        constraints,
        vec![Bound::Finite(-1.0); n],
        vec![Bound::Finite(1.0); n],
    )
    .expect("synthetic base satisfies instance invariants")
}

/// Smallest objective eigenvalue accepted without repair.
pub const STRICT_EIG_MIN: f64 = 1e-6;
/// Eigenvalue floor installed by a strictness repair.
const STRICT_RIDGE_TARGET: f64 = 1e-4;

fn repair_strictness(inst: &QcqpInstance) -> Result<Option<QcqpInstance>, ModelError> {
    let eig = min_eigenvalue(inst.objective_quad())?;
    if eig >= STRICT_EIG_MIN {
        return Ok(None);
    }
    let shifted = inst
        .objective_quad()
        .shift_diagonal(STRICT_RIDGE_TARGET - eig);
    let quads = inst.constraints().iter().map(|c| c.quad.clone()).collect();
    Ok(Some(inst.replace_matrices(shifted, quads)))
}

/// Raises the first constraint's offset above its body's box-minimum, leaving
/// the sample certifiably infeasible. Falls back to a large shift when the
/// body minimum cannot be certified.
fn tighten_infeasible(
    inst: &QcqpInstance,
    sample_seed: u64,
    opts: &SolveOptions,
) -> Result<QcqpInstance, GenError> {
    let mut rng = coeff_stream(sample_seed, quad_address(6, 0, 0, 0));
    let margin = rng.gen_range(0.25..1.0);
    let cons = &inst.constraints()[0];
    let body = QcqpInstance::new(
        "tighten-aux",
        cons.quad.clone(),
        cons.lin.clone(),
        vec![],
        inst.lower().to_vec(),
        inst.upper().to_vec(),
    )?;
    let aux = solve(&body, opts)?;
    let new_rhs = if aux.status == SolveStatus::Optimal {
        margin - aux.value
    } else {
        cons.rhs.abs() + 10.0 + margin
    };
    let mut constraints = inst.constraints().to_vec();
    constraints[0] = Constraint {
        quad: cons.quad.clone(),
        lin: cons.lin.clone(),
        rhs: new_rhs,
    };
    Ok(QcqpInstance::new(
        inst.name(),
        inst.objective_quad().clone(),
        inst.objective_lin().to_vec(),
        constraints,
        inst.lower().to_vec(),
        inst.upper().to_vec(),
    )?)
}

enum Attempt {
    Accepted(Box<DatasetRecord>),
    /// A solver breakdown: counts toward the abort threshold.
    SolverFailure(String),
    /// A valid sample of the wrong class for the balancing slot.
    WrongClass(String),
}

fn generate_one(
    spec: &GenSpec,
    split_tag: u64,
    attempt: usize,
    record_index: usize,
    opts: &SolveOptions,
    log: &mut GenerationLog,
) -> Result<Attempt, GenError> {
    let sample_seed = splitmix(spec.seed ^ splitmix(split_tag) ^ (attempt as u64));
    let mut inst = convexify(&perturb(&spec.base, sample_seed))?;
    if spec.reject_nonstrict {
        if let Some(repaired) = repair_strictness(&inst)? {
            inst = repaired;
            log.strictness_repairs += 1;
        }
    }
    // In balanced runs, odd record slots are tightened into certified
    // infeasibility; even slots must come out naturally feasible.
    let balancing = spec.balance_feasibility && inst.num_cons() >= 1;
    let want_infeasible = balancing && record_index % 2 == 1;
    if want_infeasible {
        inst = tighten_infeasible(&inst, sample_seed, opts)?;
    }

    match phase1(&inst, opts)? {
        PhaseOneOutcome::Infeasible { .. } => {
            if spec.needs_optimum() {
                return Ok(Attempt::WrongClass(format!(
                    "attempt {attempt}: infeasible sample in an optimum-labeled run"
                )));
            }
            if balancing && !want_infeasible {
                return Ok(Attempt::WrongClass(format!(
                    "attempt {attempt}: natural sample infeasible, slot wants feasible"
                )));
            }
            if want_infeasible {
                log.tightened_samples += 1;
            }
            Ok(Attempt::Accepted(Box::new(DatasetRecord {
                instance: inst,
                label_feasibility: Some(0),
                label_objective: None,
                label_solution: None,
            })))
        }
        PhaseOneOutcome::Undecided { best_slack, .. } => Ok(Attempt::SolverFailure(format!(
            "attempt {attempt}: phase one undecided at slack {best_slack:.3e}"
        ))),
        PhaseOneOutcome::Feasible(_) => {
            if want_infeasible {
                return Ok(Attempt::WrongClass(format!(
                    "attempt {attempt}: tightened sample still feasible"
                )));
            }
            if !spec.needs_optimum() {
                // Pure feasibility run: the phase-I verdict is the label.
                return Ok(Attempt::Accepted(Box::new(DatasetRecord {
                    instance: inst,
                    label_feasibility: Some(1),
                    label_objective: None,
                    label_solution: None,
                })));
            }
            let result = solve(&inst, opts)?;
            match result.status {
                SolveStatus::Optimal => Ok(Attempt::Accepted(Box::new(DatasetRecord {
                    instance: inst,
                    label_feasibility: Some(1),
                    label_objective: Some(result.value),
                    label_solution: Some(result.x),
                }))),
                status => Ok(Attempt::SolverFailure(format!(
                    "attempt {attempt}: solver ended with {status:?}"
                ))),
            }
        }
    }
}

fn generate_split(
    spec: &GenSpec,
    split: Split,
    count: usize,
    log: &mut GenerationLog,
) -> Result<Vec<DatasetRecord>, GenError> {
    let split_tag = match split {
        Split::Train => 0x7261696e,
        Split::Test => 0x74657374,
    };
    let opts = SolveOptions::default();
    let mut records = Vec::with_capacity(count);
    let mut attempt = 0usize;
    let mut solver_failures = 0usize;
    let mut last_reason = String::new();
    while records.len() < count {
        log.attempts += 1;
        match generate_one(spec, split_tag, attempt, records.len(), &opts, log)? {
            Attempt::Accepted(record) => {
                log.accepted += 1;
                records.push(*record);
            }
            Attempt::SolverFailure(reason) => {
                solver_failures += 1;
                log.solver_rejections += 1;
                last_reason.clone_from(&reason);
                log.note_rejection(reason);
            }
            Attempt::WrongClass(reason) => {
                log.infeasible_rejections += 1;
                log.note_rejection(reason);
            }
        }
        attempt += 1;
        if attempt >= 20 && solver_failures * 2 > attempt {
            return Err(GenError::TooManyFailures {
                attempts: attempt,
                failures: solver_failures,
                last: last_reason,
            });
        }
    }
    Ok(records)
}

/// Runs the full pipeline: perturb, convexify, filter, label, assemble.
/// Train and test splits draw from disjoint seed streams.
///
/// ```
/// use qcqp::datagen::{generate, synth_base, GenSpec};
/// use qcqp::gnn::Task;
///
/// let base = synth_base(6, 2, 0.4, 1);
/// let spec = GenSpec::new(base, 4, 2, 7, vec![Task::Objective]);
/// let (train, test, log) = generate(&spec)?;
/// assert_eq!((train.records.len(), test.records.len()), (4, 2));
/// assert!(log.attempts >= 6);
/// // Labels are solver-certified.
/// for record in &train.records {
///     let x = record.label_solution.as_ref().unwrap();
///     assert!(record.instance.is_feasible_point(x, 1e-6)?);
/// }
/// # Ok::<(), Box<dyn std::error::Error>>(())
/// ```
pub fn generate(spec: &GenSpec) -> Result<(Dataset, Dataset, GenerationLog), GenError> {
    let mut log = GenerationLog::default();
    let train_records = generate_split(spec, Split::Train, spec.n_train, &mut log)?;
    let test_records = generate_split(spec, Split::Test, spec.n_test, &mut log)?;
    let train = Dataset {
        records: train_records,
        base_name: spec.base.name().to_string(),
        seed: spec.seed,
        split: Split::Train,
    };
    let test = Dataset {
        records: test_records,
        base_name: spec.base.name().to_string(),
        seed: spec.seed,
        split: Split::Test,
    };
    Ok((train, test, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Bound;
    use crate::solver::kkt_residual;
    use crate::spectral::check_convexity;

    #[test]
    fn zero_coefficient_base_perturbs_to_itself() {
        let base = QcqpInstance::new(
            "zeros",
            SparseSymMatrix::zeros(3),
            vec![0.0; 3],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(3),
                lin: vec![0.0; 3],
                rhs: 0.0,
            }],
            vec![Bound::Finite(-1.0); 3],
            vec![Bound::Finite(1.0); 3],
        )
        .unwrap();
        let out = perturb(&base, 42);
        assert_eq!(out.objective_quad(), base.objective_quad());
        assert_eq!(out.objective_lin(), base.objective_lin());
        assert_eq!(out.constraints(), base.constraints());
    }

    #[test]
    fn perturbed_magnitudes_stay_inside_the_source_magnitude() {
        let base = synth_base(6, 2, 0.5, 3);
        let out = perturb(&base, 9);
        for (&(row, col, value), &(orow, ocol, original)) in out
            .objective_quad()
            .entries()
            .iter()
            .zip(base.objective_quad().entries())
        {
            assert_eq!((row, col), (orow, ocol), "sparsity pattern moved");
            assert!(value.abs() <= original.abs());
            assert!(value != 0.0);
        }
        for (cons, base_cons) in out.constraints().iter().zip(base.constraints()) {
            assert!(cons.rhs.abs() <= base_cons.rhs.abs());
        }
        assert_eq!(out.lower(), base.lower());
        assert_eq!(out.upper(), base.upper());
    }

    #[test]
    fn perturbation_is_deterministic_and_seed_sensitive() {
        let base = synth_base(5, 2, 0.4, 7);
        assert_eq!(perturb(&base, 11), perturb(&base, 11));
        assert_ne!(perturb(&base, 11), perturb(&base, 12));
    }

    #[test]
    fn synth_base_is_convex_with_strictly_feasible_origin() {
        let base = synth_base(10, 3, 0.3, 5);
        assert!(check_convexity(&base, 1e-8).unwrap());
        let report = base.evaluate(&[0.0; 10]).unwrap();
        assert!(report.max_constraint_violation <= -0.1);
        // Full density fills the whole upper triangle.
        let dense = synth_base(4, 1, 1.0, 6);
        assert_eq!(dense.objective_quad().nnz(), 10);
    }

    #[test]
    fn empty_request_yields_empty_datasets() {
        let base = synth_base(4, 1, 0.5, 8);
        let spec = GenSpec::new(base, 0, 0, 1, vec![Task::Objective]);
        let (train, test, log) = generate(&spec).unwrap();
        assert!(train.records.is_empty());
        assert!(test.records.is_empty());
        assert_eq!(log.attempts, 0);
    }

    #[test]
    fn generated_records_are_convex_sound_and_reproducible() {
        let base = synth_base(5, 2, 0.4, 21);
        let spec = GenSpec::new(base, 8, 3, 77, vec![Task::Objective, Task::Solution]);
        let (train, test, log) = generate(&spec).unwrap();
        assert_eq!(train.records.len(), 8);
        assert_eq!(test.records.len(), 3);
        assert!(log.strictness_repairs > 0, "perturbed objectives need repair");
        train.validate().unwrap();
        test.validate().unwrap();

        for record in train.records.iter().chain(&test.records) {
            let inst = &record.instance;
            assert!(check_convexity(inst, 1e-8).unwrap());
            assert!(min_eigenvalue(inst.objective_quad()).unwrap() >= STRICT_EIG_MIN);
            let x = record.label_solution.as_ref().unwrap();
            let value = record.label_objective.unwrap();
            assert!(inst.is_feasible_point(x, 1e-6).unwrap());
            assert!((inst.objective_value(x).unwrap() - value).abs() <= 1e-6);
        }

        let (train2, _, _) = generate(&spec).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn feasibility_runs_carry_both_classes() {
        let base = synth_base(5, 2, 0.4, 31);
        let spec = GenSpec::new(base, 10, 0, 5, vec![Task::Feasibility]);
        let (train, _, log) = generate(&spec).unwrap();
        let feasible = train
            .records
            .iter()
            .filter(|r| r.label_feasibility == Some(1))
            .count();
        let infeasible = train.records.len() - feasible;
        assert!(feasible >= 3, "{feasible} feasible of 10");
        assert!(infeasible >= 3, "{infeasible} infeasible of 10");
        assert!(log.tightened_samples >= 3);
    }

    #[test]
    fn feasibility_labels_agree_with_rejection_sampling() {
        use rand::Rng;
        let base = synth_base(4, 2, 0.5, 51);
        let spec = GenSpec::new(base, 12, 0, 13, vec![Task::Feasibility]);
        let (train, _, _) = generate(&spec).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(0xfea5);
        let mut confirmed_feasible = 0usize;
        let mut labeled_feasible = 0usize;
        for record in &train.records {
            let inst = &record.instance;
            let n = inst.num_vars();
            // One million box samples; finding any feasible point resolves
            // the instance as feasible.
            let mut found = false;
            for _ in 0..1_000_000 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if inst.is_feasible_point(&x, 1e-9).unwrap() {
                    found = true;
                    break;
                }
            }
            match record.label_feasibility {
                Some(0) => assert!(!found, "oracle found a feasible point in a 0-labeled record"),
                Some(1) => {
                    labeled_feasible += 1;
                    if found {
                        confirmed_feasible += 1;
                    }
                }
                other => panic!("missing label: {other:?}"),
            }
        }
        // The sampler misses thin feasible sets, but most labeled-feasible
        // records should be confirmed.
        assert!(
            confirmed_feasible * 2 >= labeled_feasible,
            "only {confirmed_feasible} of {labeled_feasible} confirmed"
        );
    }

    #[test]
    fn optimal_labels_pass_a_kkt_audit() {
        let base = synth_base(4, 2, 0.5, 41);
        let spec = GenSpec::new(base, 5, 0, 9, vec![Task::Objective]);
        let (train, _, _) = generate(&spec).unwrap();
        let opts = SolveOptions::default();
        for record in &train.records {
            let result = solve(&record.instance, &opts).unwrap();
            assert_eq!(result.status, SolveStatus::Optimal);
            let residual =
                kkt_residual(&record.instance, &result.x, &result.multipliers).unwrap();
            assert!(residual <= 1e-6);
        }
    }
}
