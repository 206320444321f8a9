//! The two fixed six-variable non-convex pairs that color refinement (and
//! therefore the message-passing networks) cannot tell apart, despite having
//! different optima or different feasibility.
//!
//! Both pairs share the same quadratic body up to re-wiring: the sum of the
//! six cross terms either forms two disjoint triangles over the variables or
//! one six-cycle. Inside the unit ball the minimum of the body is the smallest
//! eigenvalue of half the coefficient matrix: -1/2 for the triangle pair and
//! -1 for the six-cycle, which drives both counterexamples.

use serde::Serialize;

use crate::gnn::{forward, init_params, GnnConfig, OutputMode, Task};
use crate::graph::build_graph;
use crate::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
use crate::spectral::min_eigenvalue;
use crate::wl::{run_wl, separates};

/// Which counterexample pair to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// Equal-looking instances with optimal values -1/2 and -1.
    Objective,
    /// Equal-looking instances, one infeasible and one feasible.
    Feasibility,
}

/// Everything the verification run measures about a pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub kind: PairKind,
    pub wl_separated: bool,
    pub wl_rounds: [usize; 2],
    pub gnn_param_draws: usize,
    /// Largest output difference between the two graphs over all sampled
    /// networks, both output modes.
    pub gnn_max_gap: f64,
    /// Spectral-oracle optimal values (objective pair only).
    pub opt_values: Option<[f64; 2]>,
    /// Feasibility verdicts (feasibility pair only).
    pub feasibility: Option<[bool; 2]>,
    /// Worst deviation of a closed-form optimal candidate from its claimed
    /// objective value.
    pub candidate_value_error: Option<f64>,
    /// Worst constraint/bound violation among the candidate points.
    pub candidate_infeasibility: Option<f64>,
    /// Smallest distance between candidates of the two solution sets.
    pub candidate_set_distance: Option<f64>,
}

fn cross_pairs_triangles() -> Vec<(usize, usize)> {
    vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]
}

fn cross_pairs_cycle() -> Vec<(usize, usize)> {
    vec![(0, 1), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)]
}

fn coupling_matrix(pairs: &[(usize, usize)]) -> SparseSymMatrix {
    let mut entries: Vec<(usize, usize, f64)> =
        pairs.iter().map(|&(j, k)| (j, k, 1.0)).collect();
    entries.sort_by_key(|&(j, k, _)| (j, k));
    SparseSymMatrix::new(6, entries).unwrap()
}

fn unit_ball_constraint() -> Constraint {
    Constraint {
        quad: SparseSymMatrix::new(6, (0..6).map(|j| (j, j, 2.0)).collect()).unwrap(),
        lin: vec![0.0; 6],
        rhs: -1.0,
    }
}

fn unit_box() -> (Vec<Bound>, Vec<Bound>) {
    (vec![Bound::Finite(-1.0); 6], vec![Bound::Finite(1.0); 6])
}

/// The minimization pair: six cross terms over two triangles versus one
/// six-cycle, both restricted to the unit ball.
pub fn build_objective_pair() -> (QcqpInstance, QcqpInstance) {
    let build = |pairs: &[(usize, usize)], name: &str| {
        let (lower, upper) = unit_box();
        QcqpInstance::new(
            name,
            coupling_matrix(pairs),
            vec![0.0; 6],
            vec![unit_ball_constraint()],
            lower,
            upper,
        )
        .unwrap()
    };
    (
        build(&cross_pairs_triangles(), "triangle-pair"),
        build(&cross_pairs_cycle(), "six-cycle"),
    )
}

/// The feasibility pair: the same quadratic bodies moved into a constraint
/// with threshold -3/4 under a zero objective.
pub fn build_feasibility_pair() -> (QcqpInstance, QcqpInstance) {
    let build = |pairs: &[(usize, usize)], name: &str| {
        let (lower, upper) = unit_box();
        let threshold = Constraint {
            quad: coupling_matrix(pairs),
            lin: vec![0.0; 6],
            rhs: 0.75,
        };
        QcqpInstance::new(
            name,
            SparseSymMatrix::zeros(6),
            vec![0.0; 6],
            vec![threshold, unit_ball_constraint()],
            lower,
            upper,
        )
        .unwrap()
    };
    (
        build(&cross_pairs_triangles(), "triangle-pair-feas"),
        build(&cross_pairs_cycle(), "six-cycle-feas"),
    )
}

/// Minimum of `1/2 x' M x` over the unit ball, via the eigenvalue oracle:
/// `min(0, lambda_min(M / 2))`.
fn ball_minimum(body: &SparseSymMatrix) -> f64 {
    let half = body.map_values(|_, _, v| v / 2.0);
    min_eigenvalue(&half).unwrap().min(0.0)
}

/// Closed-form optimal candidates for the two objective instances.
fn objective_candidates() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s2 = std::f64::consts::SQRT_2;
    let s8 = 8.0f64.sqrt();
    let first = vec![
        vec![1.0 / s2, -1.0 / s2, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0 / s2, -1.0 / s2, 0.0],
        vec![1.0 / s8, 1.0 / s8, -2.0 / s8, 1.0 / s8, -1.0 / s8, 0.0],
    ];
    let a = 6.0f64.sqrt() / 6.0;
    let second = vec![
        vec![a, -a, a, -a, a, -a],
        vec![-a, a, -a, a, -a, a],
    ];
    (first, second)
}

const GNN_DRAWS: usize = 100;

/// Largest forward-output gap between two graphs over sampled parameter
/// draws, sweeping depth, width, and both output modes.
pub fn sampled_gnn_gap(
    g1: &crate::graph::TripartiteGraph,
    g2: &crate::graph::TripartiteGraph,
    draws: usize,
    base_seed: u64,
) -> f64 {
    let depths = [1usize, 2, 3];
    let widths = [4usize, 16];
    let mut max_gap = 0.0f64;
    for draw in 0..draws {
        let rounds = depths[draw % depths.len()];
        let width = widths[(draw / depths.len()) % widths.len()];
        let seed = base_seed.wrapping_add(draw as u64);
        for mode in [OutputMode::GraphScalar, OutputMode::NodeVector] {
            let task = match mode {
                OutputMode::GraphScalar => Task::Objective,
                OutputMode::NodeVector => Task::Solution,
            };
            let cfg = GnnConfig::new(rounds, width, mode, task);
            let params = init_params(&cfg, seed);
            let out1 = forward(&params, g1).unwrap();
            let out2 = forward(&params, g2).unwrap();
            let gap = out1
                .iter()
                .zip(&out2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            max_gap = max_gap.max(gap);
        }
    }
    max_gap
}

/// Builds the requested pair and measures every claim it exists to make:
/// joint-refinement non-separation, output equality of sampled networks, and
/// the independently computed optima / feasibility verdicts.
pub fn verify_pair(kind: PairKind) -> PairReport {
    let (first, second) = match kind {
        PairKind::Objective => build_objective_pair(),
        PairKind::Feasibility => build_feasibility_pair(),
    };
    let g1 = build_graph(&first);
    let g2 = build_graph(&second);

    let wl_separated = separates(&g1, &g2);
    let wl_rounds = [run_wl(&g1).rounds, run_wl(&g2).rounds];
    let gnn_max_gap = sampled_gnn_gap(&g1, &g2, GNN_DRAWS, 0x5eed);

    match kind {
        PairKind::Objective => {
            let opt1 = ball_minimum(first.objective_quad());
            let opt2 = ball_minimum(second.objective_quad());

            let (cands1, cands2) = objective_candidates();
            let mut value_error = 0.0f64;
            let mut infeasibility = 0.0f64;
            for (inst, cands, claimed) in
                [(&first, &cands1, opt1), (&second, &cands2, opt2)]
            {
                for x in cands {
                    let report = inst.evaluate(x).unwrap();
                    value_error = value_error.max((report.objective - claimed).abs());
                    infeasibility = infeasibility
                        .max(report.max_constraint_violation.max(0.0))
                        .max(report.bound_violation);
                }
            }
            let mut set_distance = f64::INFINITY;
            for a in &cands1 {
                for b in &cands2 {
                    let dist: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    set_distance = set_distance.min(dist);
                }
            }

            PairReport {
                kind,
                wl_separated,
                wl_rounds,
                gnn_param_draws: GNN_DRAWS,
                gnn_max_gap,
                opt_values: Some([opt1, opt2]),
                feasibility: None,
                candidate_value_error: Some(value_error),
                candidate_infeasibility: Some(infeasibility),
                candidate_set_distance: Some(set_distance),
            }
        }
        PairKind::Feasibility => {
            // Feasible iff the body can reach the threshold inside the ball
            // (the box is implied by the ball).
            let feas = |inst: &QcqpInstance| -> bool {
                ball_minimum(&inst.constraints()[0].quad) <= -inst.constraints()[0].rhs
            };
            let verdicts = [feas(&first), feas(&second)];

            // Explicit witness for the feasible instance.
            let a = 6.0f64.sqrt() / 6.0;
            let witness = vec![a, -a, a, -a, a, -a];
            let infeasibility = if verdicts[1] {
                let report = second.evaluate(&witness).unwrap();
                report
                    .max_constraint_violation
                    .max(0.0)
                    .max(report.bound_violation)
            } else {
                f64::INFINITY
            };

            PairReport {
                kind,
                wl_separated,
                wl_rounds,
                gnn_param_draws: GNN_DRAWS,
                gnn_max_gap,
                opt_values: None,
                feasibility: Some(verdicts),
                candidate_value_error: None,
                candidate_infeasibility: Some(infeasibility),
                candidate_set_distance: None,
            }
        }
    }
}
