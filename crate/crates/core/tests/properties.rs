use ensemble_control::ensemble::{integrate, ControlSignal, TimeGrid};
use ensemble_control::hamiltonian::{hamiltonian, Costate};
use ensemble_control::measure::{Atom, Metric, ParameterSpace};
use ensemble_control::problem::{builtin, BuiltinParams, ProblemSpec};
use ensemble_control::value::{enumerate_values, reduced_cost, value_oracle, DEFAULT_BUDGET};
use ensemble_control::EnsembleState;
use proptest::prelude::*;

fn linear_problem(a: Vec<f64>, c: Vec<f64>, levels: usize) -> ProblemSpec {
    let params = BuiltinParams {
        atoms: a.len(),
        a: Some(a),
        c: Some(c),
        levels,
        ..Default::default()
    };
    builtin("linear-ensemble", &params).unwrap()
}

fn coeffs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

/// Every index sequence, in lexicographic order.
fn all_sequences(k: usize, steps: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..steps {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |i| {
                    let mut t = s.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_is_positively_homogeneous(
        a in coeffs(3), c in coeffs(3), x in coeffs(3), q in coeffs(3), lam in 0.0..10.0f64,
    ) {
        let p = linear_problem(a, c, 3);
        let phi = EnsembleState::scalar(&x).unwrap();
        let costate = Costate(EnsembleState::scalar(&q).unwrap());
        let h = hamiltonian(&p, 0.3, &phi, &costate).unwrap().value;
        let hl = hamiltonian(&p, 0.3, &phi, &costate.scale(lam)).unwrap().value;
        prop_assert!((hl - lam * h).abs() <= 1e-12 * (1.0 + hl.abs()));
    }

    #[test]
    fn hamiltonian_is_superadditive(
        a in coeffs(2), c in coeffs(2), x in coeffs(2), q1 in coeffs(2), q2 in coeffs(2),
    ) {
        let p = linear_problem(a, c, 5);
        let phi = EnsembleState::scalar(&x).unwrap();
        let p1 = EnsembleState::scalar(&q1).unwrap();
        let p2 = EnsembleState::scalar(&q2).unwrap();
        let h = |s: &EnsembleState| hamiltonian(&p, 0.0, &phi, &Costate(s.clone())).unwrap().value;
        prop_assert!(h(&p1.add(&p2).unwrap()) >= h(&p1) + h(&p2) - 1e-12);
    }

    #[test]
    fn oracle_matches_brute_force(
        a in coeffs(2), c in coeffs(2), x in coeffs(2), steps in 1usize..5,
    ) {
        let p = linear_problem(a, c, 3);
        let phi = EnsembleState::scalar(&x).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let brute: Vec<f64> = all_sequences(3, steps)
            .iter()
            .map(|s| {
                let u = ControlSignal::from_indices(&p, grid, s).unwrap();
                reduced_cost(&p, &phi, &u).unwrap()
            })
            .collect();
        let listed = enumerate_values(&p, &phi, &grid, DEFAULT_BUDGET).unwrap();
        prop_assert_eq!(listed.len(), brute.len());
        for (l, b) in listed.iter().zip(&brute) {
            prop_assert!((l - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let best = brute.iter().cloned().fold(f64::INFINITY, f64::min);
        let r = value_oracle(&p, &phi, &grid).unwrap();
        prop_assert!((r.value - best).abs() <= 1e-12 * (1.0 + best.abs()));
        prop_assert_eq!(r.value, reduced_cost(&p, &phi, &r.best).unwrap());
    }

    #[test]
    fn split_integration_is_exact(
        a in coeffs(3), x in coeffs(3), steps in 2usize..40, cut in 1usize..40, seed in 0u64..1000,
    ) {
        let k = 1 + cut % (steps - 1);
        let p = linear_problem(a.clone(), vec![1.0; 3], 3);
        let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let indices: Vec<usize> = (0..steps).map(|j| ((seed >> (j % 20)) % 3) as usize).collect();
        let u = ControlSignal::from_indices(&p, grid, &indices).unwrap();
        let phi = EnsembleState::scalar(&x).unwrap();
        let whole = integrate(&p, &phi, &u).unwrap();
        let head = integrate(&p, &phi, &u.head(k).unwrap()).unwrap();
        let tail = integrate(&p, head.terminal(), &u.tail(k).unwrap()).unwrap();
        prop_assert_eq!(tail.terminal(), whole.terminal());
        for i in 0..3 {
            let single = linear_problem(vec![a[i]], vec![1.0], 3);
            let ui = ControlSignal::from_indices(&single, grid, &indices).unwrap();
            let xi = EnsembleState::scalar(&[x[i]]).unwrap();
            let alone = integrate(&single, &xi, &ui).unwrap();
            prop_assert_eq!(alone.terminal().atom(0), whole.terminal().atom(i));
        }
    }

    #[test]
    fn measure_norm_is_a_norm(
        w in prop::collection::vec(0.1..3.0f64, 4), x in coeffs(4), y in coeffs(4),
    ) {
        let space = ParameterSpace::new(
            (0..4).map(|i| Atom::with_coords(format!("w{i}"), vec![i as f64])).collect(),
            w.clone(),
            Metric::Euclidean,
        ).unwrap();
        let a = EnsembleState::scalar(&x).unwrap();
        let b = EnsembleState::scalar(&y).unwrap();
        let oracle: f64 = (0..4).map(|i| w[i] * x[i] * y[i]).sum();
        prop_assert!((space.inner(&a, &b).unwrap() - oracle).abs() <= 1e-12);
        let sum = a.add(&b).unwrap();
        prop_assert!(space.norm(&sum).unwrap() <= space.norm(&a).unwrap() + space.norm(&b).unwrap() + 1e-12);
    }

    #[test]
    fn ball_average_properties(
        w in prop::collection::vec(0.1..3.0f64, 5), v in -3.0..3.0f64, x in coeffs(5), r in 0.1..6.0f64,
    ) {
        let space = ParameterSpace::new(
            (0..5).map(|i| Atom::with_coords(format!("w{i}"), vec![i as f64])).collect(),
            w.clone(),
            Metric::Euclidean,
        ).unwrap();
        let constant = EnsembleState::constant(5, &[v]);
        let avg = space.ball_average(&constant, r).unwrap();
        for i in 0..5 {
            prop_assert!((avg.atom(i)[0] - v).abs() <= 1e-12);
        }
        // open ball around atom i: atoms at distance < r
        let field = EnsembleState::scalar(&x).unwrap();
        let avg = space.ball_average(&field, r).unwrap();
        for i in 0..5 {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..5 {
                if ((i as f64) - (j as f64)).abs() < r {
                    num += w[j] * x[j];
                    den += w[j];
                }
            }
            prop_assert!((avg.atom(i)[0] - num / den).abs() <= 1e-12);
        }
        prop_assert!(space.ball_mass(r).unwrap() <= space.ball_mass(r + 1.0).unwrap());
    }
}
