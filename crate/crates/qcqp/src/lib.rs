//! Convex quadratically constrained quadratic programs as tripartite graphs.
//!
//! The crate covers the full loop from problem data to learned predictors:
//!
//! * [`model`] — the canonical QCQP data model: sparse symmetric matrices,
//!   box bounds with explicit infinities, evaluation, and feasibility checks.
//! * [`spectral`] — dense symmetric eigenvalues (cyclic Jacobi), convexity
//!   checking, and the eigenvalue-shift convexification.
//! * [`graph`] — the lossless tripartite encoding: variable, quadratic-term,
//!   and constraint nodes joined by weighted edges, plus re-indexing.
//! * [`wl`] — color refinement over tripartite graphs, separation tests,
//!   stable color-class weight sums, and class-averaged solution transfer.
//! * [`gnn`] — the matching message-passing network: forward, hand-rolled
//!   reverse-mode gradients, Adam training with a one-cycle schedule, and
//!   checkpoints.
//! * [`solver`] — a phase-I/log-barrier interior-point method used as the
//!   labeling oracle.
//! * [`datagen`] — seeded perturbation-based dataset generation.
//! * [`counterexamples`] — the fixed six-variable pairs that refinement
//!   cannot separate despite different optima or feasibility.
//! * [`io`] — the QPLib ASCII format and the `qcqp-dataset-v1` JSON format.
//!
//! A quick taste: encode a tiny problem, refine it, and solve it.
//!
//! ```
//! use qcqp::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
//!
//! // minimize x1^2 + x2^2  subject to  x1 + x2 <= -2
//! let inst = QcqpInstance::new(
//!     "example",
//!     SparseSymMatrix::new(2, vec![(0, 0, 2.0), (1, 1, 2.0)])?,
//!     vec![0.0, 0.0],
//!     vec![Constraint {
//!         quad: SparseSymMatrix::zeros(2),
//!         lin: vec![1.0, 1.0],
//!         rhs: 2.0,
//!     }],
//!     vec![Bound::NegInf; 2],
//!     vec![Bound::PosInf; 2],
//! )?;
//!
//! let graph = qcqp::graph::build_graph(&inst);
//! assert_eq!(graph.num_quads(), 2);
//!
//! let refined = qcqp::wl::run_wl(&graph);
//! assert!(refined.rounds >= 1);
//!
//! let result = qcqp::solver::solve(&inst, &qcqp::solver::SolveOptions::default())?;
//! assert!((result.value - 2.0).abs() < 1e-6);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

#[cfg(doctest)]
mod book;
pub mod counterexamples;
pub mod datagen;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod model;
pub mod solver;
pub mod spectral;
pub mod testutil;
pub mod wl;

pub use model::{Bound, Constraint, EvalReport, ModelError, QcqpInstance, SparseSymMatrix};
