//! Property tests over randomly generated instances: encoding round trips,
//! permutation laws, convexification, and refinement invariance.

use proptest::prelude::*;

use qcqp::graph::{build_graph, graph_to_instance, permute, permute_instance};
use qcqp::io::dataset::{dataset_from_json, dataset_to_json, Dataset, DatasetRecord, Split};
use qcqp::io::qplib::{parse_qplib, write_qplib};
use qcqp::model::{Bound, Constraint, QcqpInstance, SparseSymMatrix};
use qcqp::spectral::{check_convexity, convexify, min_eigenvalue};
use qcqp::wl::{run_wl, separates};

fn arb_value() -> impl Strategy<Value = f64> {
    // Round to three decimals so instances keep a tidy text form; exclude
    // tiny magnitudes that would round to a stored zero.
    (-2000i64..=2000)
        .prop_filter("nonzero", |v| *v != 0)
        .prop_map(|v| v as f64 / 1000.0)
}

fn arb_matrix(n: usize) -> impl Strategy<Value = SparseSymMatrix> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (j..n).map(move |k| (j, k)))
        .collect();
    let len = pairs.len();
    proptest::collection::vec(proptest::option::of(arb_value()), len).prop_map(move |values| {
        let entries: Vec<(usize, usize, f64)> = pairs
            .iter()
            .zip(values)
            .filter_map(|(&(j, k), v)| v.map(|v| (j, k, v)))
            .collect();
        SparseSymMatrix::new(n, entries).unwrap()
    })
}

fn arb_bound_pair() -> impl Strategy<Value = (Bound, Bound)> {
    (
        proptest::option::of(-3000i64..=0),
        proptest::option::of(0i64..=3000),
    )
        .prop_map(|(lo, hi)| {
            (
                lo.map_or(Bound::NegInf, |v| Bound::Finite(v as f64 / 1000.0)),
                hi.map_or(Bound::PosInf, |v| Bound::Finite(v as f64 / 1000.0)),
            )
        })
}

fn arb_instance(max_n: usize, max_m: usize) -> impl Strategy<Value = QcqpInstance> {
    (1..=max_n, 0..=max_m).prop_flat_map(move |(n, m)| {
        (
            arb_matrix(n),
            proptest::collection::vec(proptest::option::of(arb_value()), n),
            proptest::collection::vec(
                (
                    arb_matrix(n),
                    proptest::collection::vec(proptest::option::of(arb_value()), n),
                    arb_value(),
                ),
                m,
            ),
            proptest::collection::vec(arb_bound_pair(), n),
        )
            .prop_map(move |(quad, lin, cons, bounds)| {
                let constraints = cons
                    .into_iter()
                    .map(|(quad, lin, rhs)| Constraint {
                        quad,
                        lin: lin.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
                        rhs,
                    })
                    .collect();
                let (lower, upper) = bounds.into_iter().unzip();
                QcqpInstance::new(
                    "prop",
                    quad,
                    lin.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
                    constraints,
                    lower,
                    upper,
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn qplib_round_trip(inst in arb_instance(6, 3)) {
        let text = write_qplib(&inst);
        let back = parse_qplib(&text).unwrap();
        prop_assert_eq!(back.objective_quad(), inst.objective_quad());
        prop_assert_eq!(back.objective_lin(), inst.objective_lin());
        prop_assert_eq!(back.constraints(), inst.constraints());
        prop_assert_eq!(back.lower(), inst.lower());
        prop_assert_eq!(back.upper(), inst.upper());
    }

    #[test]
    fn dataset_round_trip(inst in arb_instance(5, 2), feas in 0u8..=1) {
        let n = inst.num_vars();
        let record = DatasetRecord {
            instance: inst,
            label_feasibility: Some(feas),
            label_objective: (feas == 1).then_some(0.5),
            label_solution: (feas == 1).then(|| vec![0.25; n]),
        };
        let ds = Dataset {
            records: vec![record],
            base_name: "prop".into(),
            seed: 1,
            split: Split::Test,
        };
        let back = dataset_from_json(&dataset_to_json(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn graph_encoding_is_lossless(inst in arb_instance(6, 3)) {
        let g = build_graph(&inst);
        let back = graph_to_instance(&g).unwrap();
        prop_assert_eq!(back.objective_quad(), inst.objective_quad());
        prop_assert_eq!(back.constraints(), inst.constraints());
        prop_assert_eq!(build_graph(&back), g);
    }

    #[test]
    fn permutation_round_trip_and_functor(
        inst in arb_instance(5, 2),
        seed_a in any::<u64>(),
        seed_b in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let g = build_graph(&inst);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_a);
        let sigma = qcqp::testutil::random_permutation(&mut rng, inst.num_vars(), inst.num_cons());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_b);
        let tau = qcqp::testutil::random_permutation(&mut rng, inst.num_vars(), inst.num_cons());

        // Inverse law.
        let moved = permute(&g, &sigma).unwrap();
        prop_assert_eq!(permute(&moved, &sigma.inverse()).unwrap(), g.clone());
        // Functor law.
        let composed = permute(&g, &sigma.compose(&tau)).unwrap();
        let stepwise = permute(&permute(&g, &tau).unwrap(), &sigma).unwrap();
        prop_assert_eq!(composed, stepwise);
        // Graph-level and instance-level re-indexing agree.
        let via_instance = build_graph(&permute_instance(&inst, &sigma).unwrap());
        prop_assert_eq!(moved, via_instance);
    }

    #[test]
    fn convexify_idempotent_and_psd(inst in arb_instance(5, 2)) {
        let once = convexify(&inst).unwrap();
        prop_assert!(check_convexity(&once, 1e-8).unwrap());
        let twice = convexify(&once).unwrap();
        for (a, b) in once.objective_quad().entries().iter().zip(twice.objective_quad().entries()) {
            prop_assert_eq!((a.0, a.1), (b.0, b.1));
            prop_assert!((a.2 - b.2).abs() <= 1e-9);
        }
        // Shift exactness: a previously indefinite matrix lands at zero.
        if min_eigenvalue(inst.objective_quad()).unwrap() < 0.0 {
            let new_min = min_eigenvalue(once.objective_quad()).unwrap();
            prop_assert!((-1e-8..=1e-6).contains(&new_min), "min eigenvalue {new_min}");
        }
    }

    #[test]
    fn refinement_is_isomorphism_invariant(inst in arb_instance(5, 2), seed in any::<u64>()) {
        use rand::SeedableRng;
        let g = build_graph(&inst);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sigma = qcqp::testutil::random_permutation(&mut rng, inst.num_vars(), inst.num_cons());
        let moved = permute(&g, &sigma).unwrap();
        prop_assert!(!separates(&g, &moved));
        // And rounds stay within the node-count bound.
        let result = run_wl(&g);
        prop_assert!(result.rounds <= g.total_nodes().max(1));
    }

    #[test]
    fn objective_symmetry_under_triangle_flip(
        n in 2usize..=5,
        row in 0usize..4,
        col in 0usize..4,
        value in arb_value(),
        seed in any::<u64>(),
    ) {
        // Specifying a coefficient via (j, k) or (k, j) is the same matrix.
        let row = row % n;
        let col = col % n;
        prop_assume!(row != col);
        let (a, b) = (row.min(col), row.max(col));
        let upper = SparseSymMatrix::new(n, vec![(a, b, value)]).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // The dense completion is symmetric, so either orientation evaluates
        // identically.
        let dense = upper.to_dense();
        prop_assert_eq!(dense[(a, b)], dense[(b, a)]);
        let inst = QcqpInstance::new(
            "sym",
            upper,
            vec![0.0; n],
            vec![],
            vec![Bound::NegInf; n],
            vec![Bound::PosInf; n],
        ).unwrap();
        let direct = inst.objective_value(&x).unwrap();
        let via_dense: f64 = (0..n)
            .flat_map(|j| (0..n).map(move |k| (j, k)))
            .map(|(j, k)| 0.5 * dense[(j, k)] * x[j] * x[k])
            .sum();
        prop_assert!((direct - via_dense).abs() <= 1e-12);
    }
}
