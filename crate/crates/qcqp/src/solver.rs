//! Desk-scale interior-point solver for convex QCQPs, used as the labeling
//! oracle for generated datasets.
//!
//! The pipeline is classical: a phase-I pass minimizes the auxiliary slack
//! `s` subject to `g_i(x) <= s` to find a strictly feasible start (or certify
//! that none exists within tolerance), then a log-barrier path following with
//! damped Newton steps drives the barrier weight up until the duality gap is
//! below the target. Bounds enter as additional logarithmic terms. Every
//! constraint is relaxed inward by a hair (`interior_relax`) so equality-like
//! pairs of inequalities still admit a strictly feasible barrier start.
//!
//! Unboundedness is reported heuristically: when iterates run past
//! `divergence_norm` while the objective keeps falling, the solve stops with
//! `UnboundedSuspected` rather than a certificate.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Bound, ModelError, QcqpInstance};
use crate::spectral::check_convexity;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("problem is not convex within tolerance")]
    NonConvexInput,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tunable tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    /// Target for the combined KKT residual, scaled by `1 + |value|`.
    pub tol_kkt: f64,
    /// Newton iterations per barrier subproblem.
    pub max_newton: usize,
    /// Initial barrier weight `mu`; the path starts at `t = 1/mu`.
    pub barrier_mu0: f64,
    /// Multiplicative shrink of `mu` per outer round.
    pub barrier_shrink: f64,
    /// Iterate norm beyond which the problem is suspected unbounded.
    pub divergence_norm: f64,
    /// Feasibility slack accepted by phase I.
    pub feas_slack_tol: f64,
    /// Inward relaxation keeping the barrier domain open.
    pub interior_relax: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            max_newton: 200,
            barrier_mu0: 10.0,
            barrier_shrink: 0.2,
            divergence_norm: 1e8,
            feas_slack_tol: 1e-6,
            interior_relax: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    UnboundedSuspected,
    IterLimit,
}

/// Constraint and bound multipliers at the returned point.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Multipliers {
    pub cons: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub value: f64,
    pub kkt_residual: f64,
    pub multipliers: Multipliers,
    /// Objective values at the outer barrier iterates.
    pub path_values: Vec<f64>,
}

/// Phase-I verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOneOutcome {
    /// A point with every constraint value at most `feas_slack_tol`.
    Feasible(Vec<f64>),
    /// Certified: the minimum achievable slack exceeds the tolerance.
    Infeasible { slack_lower_bound: f64, x: Vec<f64> },
    /// Iteration budget exhausted inside the ambiguity band.
    Undecided { best_slack: f64, x: Vec<f64> },
}

// ---------------------------------------------------------------------------
// Damped Newton on a smooth convex barrier objective.
// ---------------------------------------------------------------------------

trait BarrierObjective {
    fn dim(&self) -> usize;
    /// Barrier value, or `None` outside the domain.
    fn value(&self, z: &[f64]) -> Option<f64>;
    fn grad_hess(&self, z: &[f64]) -> (Vec<f64>, DMatrix<f64>);
}

enum NewtonStop {
    Converged,
    IterLimit,
    Diverged,
    /// The caller's predicate fired (phase I: strict feasibility reached).
    Early,
}

struct NewtonOutcome {
    z: Vec<f64>,
    stop: NewtonStop,
}

fn solve_spd(hess: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let b = nalgebra::DVector::from_column_slice(rhs);
    let scale = 1.0 + hess.diagonal().amax();
    let mut ridge = 0.0;
    loop {
        let mut h = hess.clone();
        if ridge > 0.0 {
            for k in 0..n {
                h[(k, k)] += ridge;
            }
        }
        if let Some(chol) = h.cholesky() {
            return chol.solve(&b).iter().copied().collect();
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
        if ridge > 1e6 * scale {
            // Give up on curvature: fall back to a plain gradient step.
            return rhs.to_vec();
        }
    }
}

fn damped_newton(
    obj: &impl BarrierObjective,
    mut z: Vec<f64>,
    max_iter: usize,
    divergence_norm: f64,
    early_stop: &dyn Fn(&[f64]) -> bool,
) -> NewtonOutcome {
    const ARMIJO_C: f64 = 1e-4;
    // Newton decrement (affine invariant) marking the quadratic basin.
    const QUAD_REGION: f64 = 1e-8;
    // Decrement treated as fully converged.
    const FINAL_TOL: f64 = 1e-26;
    const POLISH_STEPS: usize = 8;

    let mut value = match obj.value(&z) {
        Some(v) => v,
        None => {
            return NewtonOutcome {
                z,
                stop: NewtonStop::Diverged,
            }
        }
    };
    if early_stop(&z) {
        return NewtonOutcome {
            z,
            stop: NewtonStop::Early,
        };
    }

    let mut polish_left = POLISH_STEPS;
    for _ in 0..max_iter {
        let (grad, hess) = obj.grad_hess(&z);
        let mut dir = solve_spd(&hess, &grad);
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let decrement: f64 = -grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>();
        if !decrement.is_finite() || decrement <= FINAL_TOL {
            return NewtonOutcome {
                z,
                stop: NewtonStop::Converged,
            };
        }

        // Step-length cap: near-linear barriers produce enormous Newton
        // directions; genuinely unbounded problems still diverge geometrically
        // under the cap and get caught by the norm check.
        let dir_norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step_cap = 100.0 * (1.0 + z_norm);
        let alpha0 = if dir_norm > step_cap {
            step_cap / dir_norm
        } else {
            1.0
        };

        let accepted = if decrement / 2.0 <= QUAD_REGION {
            // Quadratic basin: the Armijo test drowns in floating-point noise
            // of the barrier value, so take domain-guarded full steps for a
            // few final iterations.
            if polish_left == 0 {
                return NewtonOutcome {
                    z,
                    stop: NewtonStop::Converged,
                };
            }
            polish_left -= 1;
            let mut alpha = alpha0;
            let mut taken = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
                if let Some(trial_value) = obj.value(&trial) {
                    z = trial;
                    value = trial_value;
                    taken = true;
                    break;
                }
                alpha *= 0.5;
            }
            taken
        } else {
            // Backtrack into the domain, then Armijo.
            let mut alpha = alpha0;
            let mut taken = false;
            for _ in 0..80 {
                let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
                if let Some(trial_value) = obj.value(&trial) {
                    if trial_value <= value - ARMIJO_C * alpha * decrement {
                        z = trial;
                        value = trial_value;
                        taken = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            taken
        };
        if !accepted {
            // No progress possible at this scale.
            return NewtonOutcome {
                z,
                stop: NewtonStop::Converged,
            };
        }
        if early_stop(&z) {
            return NewtonOutcome {
                z,
                stop: NewtonStop::Early,
            };
        }
        let norm = z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if norm > divergence_norm {
            return NewtonOutcome {
                z,
                stop: NewtonStop::Diverged,
            };
        }
    }
    NewtonOutcome {
        z,
        stop: NewtonStop::IterLimit,
    }
}

// ---------------------------------------------------------------------------
// Barrier objectives.
// ---------------------------------------------------------------------------

struct FiniteBounds {
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
}

fn finite_bounds(inst: &QcqpInstance) -> FiniteBounds {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for j in 0..inst.num_vars() {
        if let Bound::Finite(lo) = inst.lower()[j] {
            lower.push((j, lo));
        }
        if let Bound::Finite(hi) = inst.upper()[j] {
            upper.push((j, hi));
        }
    }
    FiniteBounds { lower, upper }
}

/// Strictly interior starting point for the box (midpoint where possible).
fn box_interior_point(inst: &QcqpInstance) -> Vec<f64> {
    (0..inst.num_vars())
        .map(|j| match (inst.lower()[j], inst.upper()[j]) {
            (Bound::Finite(lo), Bound::Finite(hi)) => 0.5 * (lo + hi),
            (Bound::Finite(lo), _) => lo + 1.0,
            (_, Bound::Finite(hi)) => hi - 1.0,
            _ => 0.0,
        })
        .collect()
}

/// Number of logarithmic terms in the phase-II barrier.
fn barrier_term_count(inst: &QcqpInstance, bounds: &FiniteBounds) -> usize {
    inst.num_cons() + bounds.lower.len() + bounds.upper.len()
}

struct PhaseTwoBarrier<'a> {
    inst: &'a QcqpInstance,
    bounds: &'a FiniteBounds,
    t: f64,
    relax: f64,
}

impl BarrierObjective for PhaseTwoBarrier<'_> {
    fn dim(&self) -> usize {
        self.inst.num_vars()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut total = self.t * self.inst.objective_value(x).ok()?;
        for cons in self.inst.constraints() {
            let slack = self.relax - cons.value(x);
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        for &(j, lo) in &self.bounds.lower {
            let slack = x[j] - lo + self.relax;
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        for &(j, hi) in &self.bounds.upper {
            let slack = hi - x[j] + self.relax;
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        Some(total)
    }

    fn grad_hess(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut grad = self.inst.objective_gradient(x);
        for g in grad.iter_mut() {
            *g *= self.t;
        }
        let mut hess = self.inst.objective_quad().to_dense() * self.t;

        for cons in self.inst.constraints() {
            let slack = self.relax - cons.value(x);
            let cgrad = cons.gradient(x);
            let inv = 1.0 / slack;
            for (g, &cg) in grad.iter_mut().zip(&cgrad) {
                *g += cg * inv;
            }
            // Q_i / slack + grad grad' / slack^2.
            for &(row, col, value) in cons.quad.entries() {
                hess[(row, col)] += value * inv;
                if row != col {
                    hess[(col, row)] += value * inv;
                }
            }
            let inv2 = inv * inv;
            for a in 0..n {
                if cgrad[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    hess[(a, b)] += cgrad[a] * cgrad[b] * inv2;
                }
            }
        }
        for &(j, lo) in &self.bounds.lower {
            let slack = x[j] - lo + self.relax;
            grad[j] -= 1.0 / slack;
            hess[(j, j)] += 1.0 / (slack * slack);
        }
        for &(j, hi) in &self.bounds.upper {
            let slack = hi - x[j] + self.relax;
            grad[j] += 1.0 / slack;
            hess[(j, j)] += 1.0 / (slack * slack);
        }
        (grad, hess)
    }
}

/// Phase-I barrier over `(x, s)`: minimize `t s` inside
/// `g_i(x) <= s`, box bounds on `x`.
struct PhaseOneBarrier<'a> {
    inst: &'a QcqpInstance,
    bounds: &'a FiniteBounds,
    t: f64,
    relax: f64,
}

impl BarrierObjective for PhaseOneBarrier<'_> {
    fn dim(&self) -> usize {
        self.inst.num_vars() + 1
    }

    fn value(&self, z: &[f64]) -> Option<f64> {
        let n = self.inst.num_vars();
        let (x, s) = (&z[..n], z[n]);
        let mut total = self.t * s;
        for cons in self.inst.constraints() {
            let slack = s - cons.value(x);
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        for &(j, lo) in &self.bounds.lower {
            let slack = x[j] - lo + self.relax;
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        for &(j, hi) in &self.bounds.upper {
            let slack = hi - x[j] + self.relax;
            if slack <= 0.0 {
                return None;
            }
            total -= slack.ln();
        }
        Some(total)
    }

    fn grad_hess(&self, z: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.inst.num_vars();
        let (x, s) = (&z[..n], z[n]);
        let mut grad = vec![0.0; n + 1];
        grad[n] = self.t;
        let mut hess = DMatrix::zeros(n + 1, n + 1);

        for cons in self.inst.constraints() {
            let slack = s - cons.value(x);
            let inv = 1.0 / slack;
            let inv2 = inv * inv;
            let cgrad = cons.gradient(x);
            for (g, &cg) in grad.iter_mut().take(n).zip(&cgrad) {
                *g += cg * inv;
            }
            grad[n] -= inv;
            for &(row, col, value) in cons.quad.entries() {
                hess[(row, col)] += value * inv;
                if row != col {
                    hess[(col, row)] += value * inv;
                }
            }
            for a in 0..n {
                if cgrad[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    hess[(a, b)] += cgrad[a] * cgrad[b] * inv2;
                }
                hess[(a, n)] -= cgrad[a] * inv2;
                hess[(n, a)] -= cgrad[a] * inv2;
            }
            hess[(n, n)] += inv2;
        }
        for &(j, lo) in &self.bounds.lower {
            let slack = x[j] - lo + self.relax;
            grad[j] -= 1.0 / slack;
            hess[(j, j)] += 1.0 / (slack * slack);
        }
        for &(j, hi) in &self.bounds.upper {
            let slack = hi - x[j] + self.relax;
            grad[j] += 1.0 / slack;
            hess[(j, j)] += 1.0 / (slack * slack);
        }
        (grad, hess)
    }
}

// ---------------------------------------------------------------------------
// Public operations.
// ---------------------------------------------------------------------------

const MAX_OUTER_ROUNDS: usize = 80;

/// Finds a point with constraint values at most `feas_slack_tol`, or
/// certifies via the barrier duality gap that no such point exists.
pub fn phase1(inst: &QcqpInstance, opts: &SolveOptions) -> Result<PhaseOneOutcome, SolverError> {
    if !check_convexity(inst, 1e-8)? {
        return Err(SolverError::NonConvexInput);
    }
    let bounds = finite_bounds(inst);
    let x0 = box_interior_point(inst);
    if inst.num_cons() == 0 {
        return Ok(PhaseOneOutcome::Feasible(x0));
    }
    let report = inst.evaluate(&x0)?;
    let early_margin = (10.0 * opts.feas_slack_tol).min(1e-3);
    if report.max_constraint_violation <= -early_margin {
        return Ok(PhaseOneOutcome::Feasible(x0));
    }

    let mut z: Vec<f64> = x0;
    let s0 = report.max_constraint_violation + 1.0;
    z.push(s0);

    let terms = inst.num_cons() + bounds.lower.len() + bounds.upper.len();
    let mut t = 1.0 / opts.barrier_mu0;
    let mut best = z.clone();
    let n = inst.num_vars();
    // Phase I may be unbounded below in `s`; stop as soon as the iterate is
    // strictly feasible for the real constraints.
    let feasible_now = |z: &[f64]| -> bool {
        inst.evaluate(&z[..n])
            .map(|report| report.max_constraint_violation <= -early_margin)
            .unwrap_or(false)
    };
    for _ in 0..MAX_OUTER_ROUNDS {
        let barrier = PhaseOneBarrier {
            inst,
            bounds: &bounds,
            t,
            relax: opts.interior_relax,
        };
        let outcome = damped_newton(
            &barrier,
            z,
            opts.max_newton,
            opts.divergence_norm,
            &feasible_now,
        );
        z = outcome.z;
        best = z.clone();
        if matches!(outcome.stop, NewtonStop::Early) {
            return Ok(PhaseOneOutcome::Feasible(z[..n].to_vec()));
        }
        if matches!(outcome.stop, NewtonStop::Diverged) {
            break;
        }
        let s = z[inst.num_vars()];
        if s <= -early_margin {
            return Ok(PhaseOneOutcome::Feasible(z[..inst.num_vars()].to_vec()));
        }
        let gap = terms as f64 / t;
        if s - gap > opts.feas_slack_tol {
            return Ok(PhaseOneOutcome::Infeasible {
                slack_lower_bound: s - gap,
                x: z[..inst.num_vars()].to_vec(),
            });
        }
        if gap <= 0.1 * opts.feas_slack_tol {
            let x = z[..inst.num_vars()].to_vec();
            return if s <= opts.feas_slack_tol {
                Ok(PhaseOneOutcome::Feasible(x))
            } else {
                Ok(PhaseOneOutcome::Infeasible {
                    slack_lower_bound: s - gap,
                    x,
                })
            };
        }
        t /= opts.barrier_shrink;
    }
    let s = best[inst.num_vars()];
    let x = best[..inst.num_vars()].to_vec();
    Ok(PhaseOneOutcome::Undecided { best_slack: s, x })
}

/// Full solve: phase-I feasibility, then log-barrier path following.
///
/// ```
/// use qcqp::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
/// use qcqp::solver::{solve, SolveOptions, SolveStatus};
///
/// // minimize x1^2 + x2^2  subject to  x1 + x2 <= -2
/// let inst = QcqpInstance::new(
///     "halfspace",
///     SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)])?,
///     vec![0.0, 0.0],
///     vec![Constraint {
///         quad: SparseSymMatrix::zeros(2),
///         lin: vec![1.0, 1.0],
///         rhs: 2.0,
///     }],
///     vec![Bound::NegInf; 2],
///     vec![Bound::PosInf; 2],
/// )?;
///
/// let result = solve(&inst, &SolveOptions::default())?;
/// assert_eq!(result.status, SolveStatus::Optimal);
/// assert!((result.value - 2.0).abs() < 1e-6);
/// assert!((result.multipliers.cons[0] - 2.0).abs() < 1e-3);
/// # Ok::<(), Box<dyn std::error::Error>>(())
/// ```
pub fn solve(inst: &QcqpInstance, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    let start = match phase1(inst, opts)? {
        PhaseOneOutcome::Feasible(x) => x,
        PhaseOneOutcome::Infeasible {
            slack_lower_bound,
            x,
        } => {
            let value = inst.objective_value(&x)?;
            return Ok(SolveResult {
                status: SolveStatus::Infeasible,
                x,
                value,
                kkt_residual: slack_lower_bound,
                multipliers: Multipliers::default(),
                path_values: Vec::new(),
            });
        }
        PhaseOneOutcome::Undecided { x, .. } => {
            let value = inst.objective_value(&x)?;
            return Ok(SolveResult {
                status: SolveStatus::IterLimit,
                x,
                value,
                kkt_residual: f64::MAX,
                multipliers: Multipliers::default(),
                path_values: Vec::new(),
            });
        }
    };

    let bounds = finite_bounds(inst);
    let terms = barrier_term_count(inst, &bounds);
    let mut x = start;
    let mut t = 1.0 / opts.barrier_mu0;
    let start_value = inst.objective_value(&x)?;
    // Objective values at the outer central-path iterates; the phase-I point
    // itself is not on the path and is tracked separately.
    let mut path_values = Vec::new();

    if terms == 0 {
        // Unconstrained: one Newton run on the raw objective.
        let barrier = PhaseTwoBarrier {
            inst,
            bounds: &bounds,
            t: 1.0,
            relax: opts.interior_relax,
        };
        let outcome = damped_newton(&barrier, x, opts.max_newton, opts.divergence_norm, &|_| false);
        x = outcome.z;
        let value = inst.objective_value(&x)?;
        path_values.push(value);
        return finish(
            inst,
            opts,
            x,
            value,
            start_value,
            0.0,
            Multipliers::default(),
            path_values,
            matches!(outcome.stop, NewtonStop::Diverged),
        );
    }

    let mut diverged = false;
    for _ in 0..MAX_OUTER_ROUNDS {
        let barrier = PhaseTwoBarrier {
            inst,
            bounds: &bounds,
            t,
            relax: opts.interior_relax,
        };
        let outcome = damped_newton(&barrier, x, opts.max_newton, opts.divergence_norm, &|_| false);
        x = outcome.z;
        let value = inst.objective_value(&x)?;
        path_values.push(value);
        if matches!(outcome.stop, NewtonStop::Diverged) {
            diverged = true;
            break;
        }
        let gap = terms as f64 / t;
        if gap <= 0.25 * opts.tol_kkt * (1.0 + value.abs()) {
            break;
        }
        t /= opts.barrier_shrink;
    }

    // Multipliers from the final barrier point.
    let mut multipliers = Multipliers {
        cons: Vec::with_capacity(inst.num_cons()),
        lower: vec![0.0; inst.num_vars()],
        upper: vec![0.0; inst.num_vars()],
    };
    for cons in inst.constraints() {
        let slack = opts.interior_relax - cons.value(&x);
        multipliers.cons.push(if slack > 0.0 { 1.0 / (t * slack) } else { 0.0 });
    }
    for &(j, lo) in &bounds.lower {
        let slack = x[j] - lo + opts.interior_relax;
        if slack > 0.0 {
            multipliers.lower[j] = 1.0 / (t * slack);
        }
    }
    for &(j, hi) in &bounds.upper {
        let slack = hi - x[j] + opts.interior_relax;
        if slack > 0.0 {
            multipliers.upper[j] = 1.0 / (t * slack);
        }
    }

    // The barrier multipliers inherit floating-point noise from the tiny
    // active slacks; refit the active multipliers by least squares and keep
    // whichever set scores the lower residual.
    let residual = kkt_residual(inst, &x, &multipliers)?;
    if let Some(refined) = refine_multipliers(inst, &bounds, &x, &multipliers) {
        let refined_residual = kkt_residual(inst, &x, &refined)?;
        if refined_residual < residual {
            multipliers = refined;
        }
    }

    let value = inst.objective_value(&x)?;
    let residual = kkt_residual(inst, &x, &multipliers)?;
    finish(
        inst,
        opts,
        x,
        value,
        start_value,
        residual,
        multipliers,
        path_values,
        diverged,
    )
}

/// Least-squares refit of the near-active multipliers: minimizes the
/// stationarity norm over the active columns, holding the (tiny) inactive
/// multipliers fixed. Negative solutions are clipped to zero.
fn refine_multipliers(
    inst: &QcqpInstance,
    bounds: &FiniteBounds,
    x: &[f64],
    barrier: &Multipliers,
) -> Option<Multipliers> {
    let n = inst.num_vars();
    let x_scale = 1.0 + x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let active_threshold = 1e-5 * x_scale;

    enum Column {
        Cons(usize),
        Lower(usize),
        Upper(usize),
    }
    let mut columns: Vec<(Column, Vec<f64>)> = Vec::new();
    let report = inst.evaluate(x).ok()?;
    for (i, cons) in inst.constraints().iter().enumerate() {
        if report.constraint_values[i].abs() <= active_threshold {
            columns.push((Column::Cons(i), cons.gradient(x)));
        }
    }
    for &(j, lo) in &bounds.lower {
        if (x[j] - lo).abs() <= active_threshold {
            let mut col = vec![0.0; n];
            col[j] = -1.0;
            columns.push((Column::Lower(j), col));
        }
    }
    for &(j, hi) in &bounds.upper {
        if (hi - x[j]).abs() <= active_threshold {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            columns.push((Column::Upper(j), col));
        }
    }
    if columns.is_empty() {
        return None;
    }

    // Right-hand side: -(objective gradient + inactive contributions).
    let mut rhs = inst.objective_gradient(x);
    for (i, cons) in inst.constraints().iter().enumerate() {
        let lambda = barrier.cons[i];
        if report.constraint_values[i].abs() > active_threshold && lambda != 0.0 {
            let grad = cons.gradient(x);
            for (slot, g) in rhs.iter_mut().zip(&grad) {
                *slot += lambda * g;
            }
        }
    }
    for &(j, lo) in &bounds.lower {
        if (x[j] - lo).abs() > active_threshold {
            rhs[j] -= barrier.lower[j];
        }
    }
    for &(j, hi) in &bounds.upper {
        if (hi - x[j]).abs() > active_threshold {
            rhs[j] += barrier.upper[j];
        }
    }
    for v in rhs.iter_mut() {
        *v = -*v;
    }

    let k = columns.len();
    let a = DMatrix::from_fn(n, k, |row, col| columns[col].1[row]);
    let b = nalgebra::DVector::from_column_slice(&rhs);
    let mut normal = a.transpose() * &a;
    for idx in 0..k {
        normal[(idx, idx)] += 1e-12 * (1.0 + normal[(idx, idx)]);
    }
    let solution = normal.cholesky()?.solve(&(a.transpose() * b));

    let mut refined = barrier.clone();
    for (slot, (column, _)) in solution.iter().zip(&columns) {
        let lambda = slot.max(0.0);
        match column {
            Column::Cons(i) => refined.cons[*i] = lambda,
            Column::Lower(j) => refined.lower[*j] = lambda,
            Column::Upper(j) => refined.upper[*j] = lambda,
        }
    }
    Some(refined)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    inst: &QcqpInstance,
    opts: &SolveOptions,
    x: Vec<f64>,
    value: f64,
    start_value: f64,
    residual: f64,
    multipliers: Multipliers,
    path_values: Vec<f64>,
    diverged: bool,
) -> Result<SolveResult, SolverError> {
    if diverged {
        // Objective still falling at enormous iterates: flag, do not certify.
        let falling = value < start_value - 1.0;
        return Ok(SolveResult {
            status: if falling {
                SolveStatus::UnboundedSuspected
            } else {
                SolveStatus::IterLimit
            },
            x,
            value,
            kkt_residual: residual,
            multipliers,
            path_values,
        });
    }
    let feasible = inst.is_feasible_point(&x, 1e-6)?;
    let status = if feasible && residual <= opts.tol_kkt * (1.0 + value.abs()) {
        SolveStatus::Optimal
    } else {
        SolveStatus::IterLimit
    };
    Ok(SolveResult {
        status,
        x,
        value,
        kkt_residual: residual,
        multipliers,
        path_values,
    })
}

/// Combined KKT residual at `(x, multipliers)`: the largest of the
/// stationarity infinity norm, primal violation, dual negativity, and
/// complementarity products.
pub fn kkt_residual(
    inst: &QcqpInstance,
    x: &[f64],
    multipliers: &Multipliers,
) -> Result<f64, ModelError> {
    let report = inst.evaluate(x)?;

    let mut stationarity = inst.objective_gradient(x);
    for (cons, &lambda) in inst.constraints().iter().zip(&multipliers.cons) {
        if lambda != 0.0 {
            let cgrad = cons.gradient(x);
            for (s, &cg) in stationarity.iter_mut().zip(&cgrad) {
                *s += lambda * cg;
            }
        }
    }
    for (j, slot) in stationarity.iter_mut().enumerate() {
        *slot -= multipliers.lower.get(j).copied().unwrap_or(0.0);
        *slot += multipliers.upper.get(j).copied().unwrap_or(0.0);
    }
    let stationarity_norm = stationarity.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let primal = report
        .max_constraint_violation
        .max(0.0)
        .max(report.bound_violation);

    let mut dual = 0.0f64;
    let mut complementarity = 0.0f64;
    for (i, &lambda) in multipliers.cons.iter().enumerate() {
        dual = dual.max(-lambda);
        complementarity = complementarity.max((lambda * report.constraint_values[i]).abs());
    }
    for (j, &xj) in x.iter().enumerate() {
        let lo_mult = multipliers.lower.get(j).copied().unwrap_or(0.0);
        let hi_mult = multipliers.upper.get(j).copied().unwrap_or(0.0);
        dual = dual.max(-lo_mult).max(-hi_mult);
        if let Bound::Finite(lo) = inst.lower()[j] {
            complementarity = complementarity.max((lo_mult * (xj - lo)).abs());
        }
        if let Bound::Finite(hi) = inst.upper()[j] {
            complementarity = complementarity.max((hi_mult * (hi - xj)).abs());
        }
    }

    Ok(stationarity_norm
        .max(primal)
        .max(dual)
        .max(complementarity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Constraint, SparseSymMatrix};

    fn free(n: usize) -> (Vec<Bound>, Vec<Bound>) {
        (vec![Bound::NegInf; n], vec![Bound::PosInf; n])
    }

    #[test]
    fn box_constrained_parabola() {
        let inst = QcqpInstance::new(
            "parabola",
            SparseSymMatrix::new(1, vec![(0, 0, 2.0)]).unwrap(),
            vec![0.0],
            vec![],
            vec![Bound::Finite(-1.0)],
            vec![Bound::Finite(1.0)],
        )
        .unwrap();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        assert!(result.x[0].abs() <= 1e-6);
        assert!(result.value.abs() <= 1e-9);
    }

    #[test]
    fn halfspace_constrained_quadratic_has_analytic_solution() {
        // min x1^2 + x2^2 s.t. x1 + x2 <= -2: optimum (-1, -1), value 2,
        // multiplier 2.
        let inst = QcqpInstance::new(
            "halfspace",
            SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)]).unwrap(),
            vec![0.0, 0.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![1.0, 1.0],
                rhs: 2.0,
            }],
            free(2).0,
            free(2).1,
        )
        .unwrap();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        assert!((result.value - 2.0).abs() <= 1e-6, "value {}", result.value);
        assert!((result.x[0] + 1.0).abs() <= 1e-4);
        assert!((result.x[1] + 1.0).abs() <= 1e-4);
        assert!((result.multipliers.cons[0] - 2.0).abs() <= 1e-3);
    }

    #[test]
    fn analytic_kkt_point_has_tiny_residual() {
        let inst = QcqpInstance::new(
            "halfspace",
            SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)]).unwrap(),
            vec![0.0, 0.0],
            vec![Constraint {
                quad: SparseSymMatrix::zeros(2),
                lin: vec![1.0, 1.0],
                rhs: 2.0,
            }],
            free(2).0,
            free(2).1,
        )
        .unwrap();
        let multipliers = Multipliers {
            cons: vec![2.0],
            lower: vec![0.0, 0.0],
            upper: vec![0.0, 0.0],
        };
        let at_opt = kkt_residual(&inst, &[-1.0, -1.0], &multipliers).unwrap();
        assert!(at_opt <= 1e-8, "residual {at_opt}");

        // Perturbing the point must visibly raise the residual.
        let perturbed = kkt_residual(&inst, &[-1.0 + 1e-3, -1.0], &multipliers).unwrap();
        assert!(perturbed >= 1e-4, "residual {perturbed}");

        // A random infeasible point scores at least its primal violation.
        let infeasible = kkt_residual(&inst, &[1.0, 1.0], &multipliers).unwrap();
        assert!(infeasible >= 4.0 - 1e-12);
    }

    #[test]
    fn impossible_quadratic_constraint_is_certified_infeasible() {
        // x^2 <= -1, i.e. x^2 + 1 <= 0: minimum slack is 1.
        let inst = QcqpInstance::new(
            "impossible",
            SparseSymMatrix::zeros(1),
            vec![0.0],
            vec![Constraint {
                quad: SparseSymMatrix::new(1, vec![(0, 0, 2.0)]).unwrap(),
                lin: vec![0.0],
                rhs: 1.0,
            }],
            free(1).0,
            free(1).1,
        )
        .unwrap();
        match phase1(&inst, &SolveOptions::default()).unwrap() {
            PhaseOneOutcome::Infeasible {
                slack_lower_bound, ..
            } => {
                assert!(slack_lower_bound > 0.5, "bound {slack_lower_bound}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unit_ball_interior_point_is_found_immediately() {
        let (first, _) = crate::counterexamples::build_objective_pair();
        // Only the ball constraint with a zero objective is convex; reuse its
        // constraint under a fresh convex objective.
        let inst = QcqpInstance::new(
            "ball",
            SparseSymMatrix::zeros(6),
            vec![0.0; 6],
            first.constraints().to_vec(),
            first.lower().to_vec(),
            first.upper().to_vec(),
        )
        .unwrap();
        match phase1(&inst, &SolveOptions::default()).unwrap() {
            PhaseOneOutcome::Feasible(x) => {
                assert!(inst.is_feasible_point(&x, 0.0).unwrap());
                assert_eq!(x, vec![0.0; 6]);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn descent_ray_is_flagged_unbounded() {
        // min -x with x >= 0 and no upper bound.
        let inst = QcqpInstance::new(
            "ray",
            SparseSymMatrix::zeros(1),
            vec![-1.0],
            vec![],
            vec![Bound::Finite(0.0)],
            vec![Bound::PosInf],
        )
        .unwrap();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.status, SolveStatus::UnboundedSuspected);
    }

    #[test]
    fn nonconvex_input_is_rejected() {
        let inst = QcqpInstance::new(
            "indef",
            SparseSymMatrix::new(2, vec![(0, 1, 1.0)]).unwrap(),
            vec![0.0, 0.0],
            vec![],
            free(2).0,
            free(2).1,
        )
        .unwrap();
        assert!(matches!(
            solve(&inst, &SolveOptions::default()),
            Err(SolverError::NonConvexInput)
        ));
    }

    #[test]
    fn barrier_path_objective_is_monotone_after_feasibility() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let inst = crate::testutil::random_convex_instance(&mut rng, 4, 2);
            let result = solve(&inst, &SolveOptions::default()).unwrap();
            assert_eq!(result.status, SolveStatus::Optimal);
            for pair in result.path_values.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "path not monotone: {pair:?}");
            }
        }
    }

    #[test]
    fn optimal_results_satisfy_their_own_kkt_check() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let opts = SolveOptions::default();
        for _ in 0..15 {
            let inst = crate::testutil::random_convex_instance(&mut rng, 5, 3);
            let result = solve(&inst, &opts).unwrap();
            assert_eq!(result.status, SolveStatus::Optimal);
            assert!(inst.is_feasible_point(&result.x, 1e-6).unwrap());
            let recomputed = kkt_residual(&inst, &result.x, &result.multipliers).unwrap();
            assert!(recomputed <= opts.tol_kkt * (1.0 + result.value.abs()) * 1.0001);
        }
    }
}
