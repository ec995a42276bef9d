mod common;

use gdsolver_core::data::{gen_regression, split, RegressionKind, RegressionTask, Split};
use gdsolver_core::encoder::{apply_solution, encode_classification, encode_regression, EncoderConfig};
use gdsolver_core::milp::{write_lp, Constraint, LinExpr, MilpModel, ObjSense, VarKind, Variable};
use gdsolver_core::nn::{argmax, Activation, Dnn, Layer, Matrix};
use gdsolver_core::solver::{solve_milp, MilpStatus, SolverConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::enumerate_optimum;

fn layer_strategy(max_in: usize, max_out: usize, min_out: usize) -> impl Strategy<Value = Layer> {
    (1..=max_in, min_out..=max_out, any::<bool>()).prop_flat_map(|(n, m, relu)| {
        (
            prop::collection::vec(-2.0..2.0f64, n * m),
            prop::collection::vec(-1.0..1.0f64, m),
        )
            .prop_map(move |(w, b)| {
                let act = if relu { Activation::Relu } else { Activation::Identity };
                Layer::new(Matrix::from_vec(m, n, w).unwrap(), b, act).unwrap()
            })
    })
}

fn inputs(layer: &Layer, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, layer.inputs()), 1..=count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshot_round_trip_is_bit_exact(
        dims in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
        relu_out in any::<bool>(),
    ) {
        let act = if relu_out { Activation::Relu } else { Activation::Identity };
        let dnn = Dnn::random(&dims, act, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let back = Dnn::from_json(&dnn.to_json()).unwrap();
        let bits = |d: &Dnn| d.flat_parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&dnn), bits(&back));
        prop_assert_eq!(dnn.to_json(), back.to_json());
    }

    #[test]
    fn split_partitions_the_dataset(n in 10usize..200, seed in any::<u64>()) {
        let ds = gen_regression(&RegressionTask::new(RegressionKind::Affine), n, seed).unwrap();
        let (train, val, test) = split(&ds, &Split { seed, ..Split::default() }).unwrap();
        prop_assert_eq!(train.len() + val.len() + test.len(), n);
        let mut xs: Vec<f64> = [&train, &val, &test].iter().flat_map(|d| d.x.iter().map(|x| x[0])).collect();
        let mut orig: Vec<f64> = ds.x.iter().map(|x| x[0]).collect();
        xs.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        prop_assert_eq!(xs, orig);
    }

    #[test]
    fn regression_solution_improves_every_tightened_point(
        (layer, h) in layer_strategy(3, 2, 1).prop_flat_map(|l| { let h = inputs(&l, 4); (Just(l), h) }),
        noise in prop::collection::vec(-1.0..1.0f64, 8),
    ) {
        let current: Vec<Vec<f64>> = h.iter().map(|x| layer.apply(x).unwrap()).collect();
        let y: Vec<Vec<f64>> = current
            .iter()
            .enumerate()
            .map(|(t, o)| o.iter().enumerate().map(|(j, v)| v + noise[(2 * t + j) % 8]).collect())
            .collect();
        let cfg = EncoderConfig::with_radius(0.2);
        let enc = encode_regression(&layer, &h, &y, &cfg).unwrap();
        let out = solve_milp(&enc.model, &SolverConfig::default()).unwrap();
        if let Some(inc) = out.incumbent {
            let mut dnn = Dnn::new(vec![layer.clone()]).unwrap();
            apply_solution(&mut dnn, &enc.params, &inc.values).unwrap();
            let new = dnn.final_layer();
            for (w0, w1) in layer.weights.as_slice().iter().zip(new.weights.as_slice()) {
                prop_assert!((w1 - w0).abs() <= 0.2 + 1e-7);
            }
            for (t, x) in h.iter().enumerate() {
                let after = dnn.forward(x).unwrap();
                for j in 0..layer.outputs() {
                    let loss = (after[j] - y[t][j]).abs();
                    prop_assert!(loss <= enc.caps[t][j] + 1e-6, "point {t} output {j}: {loss} > {}", enc.caps[t][j]);
                }
            }
        }
    }

    #[test]
    fn classification_solution_meets_the_floor(
        (layer, h) in layer_strategy(3, 3, 2).prop_flat_map(|l| { let h = inputs(&l, 4); (Just(l), h) }),
        label_seed in any::<u64>(),
    ) {
        let m = layer.outputs();
        let labels: Vec<usize> = (0..h.len()).map(|t| ((label_seed >> (2 * t)) as usize) % m).collect();
        let enc = encode_classification(&layer, &h, &labels, &EncoderConfig::with_radius(0.5)).unwrap();
        let out = solve_milp(&enc.model, &SolverConfig::default()).unwrap();
        if let Some(inc) = out.incumbent {
            let mut dnn = Dnn::new(vec![layer.clone()]).unwrap();
            apply_solution(&mut dnn, &enc.params, &inc.values).unwrap();
            let correct = h.iter().zip(&labels).filter(|(x, &l)| argmax(&dnn.forward(x).unwrap()) == l).count();
            prop_assert!(correct >= enc.floor, "{correct} < floor {}", enc.floor);
        } else {
            prop_assert!(matches!(out.status, MilpStatus::Infeasible));
        }
    }
}

fn random_milp(seed: u64) -> MilpModel {
    use rand::Rng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MilpModel::new();
    let nb = r.random_range(1..=5);
    let nc = r.random_range(1..=3);
    let mut vars = Vec::new();
    for i in 0..nb {
        vars.push(m.add_variable(Variable::new(format!("b{i}"), VarKind::Binary)).unwrap());
    }
    for i in 0..nc {
        let lb = r.random_range(-3.0..0.0);
        let ub = lb + r.random_range(0.5..4.0);
        vars.push(m.add_variable(Variable::new(format!("x{i}"), VarKind::bounded(lb, ub))).unwrap());
    }
    for _ in 0..r.random_range(1..=5) {
        let mut e = LinExpr::new();
        for &v in &vars {
            if r.random_bool(0.6) {
                e.push(r.random_range(-3i32..=3) as f64, v);
            }
        }
        let rhs = r.random_range(-2i32..=4) as f64;
        m.add_constraint(if r.random_bool(0.5) { Constraint::le(e, rhs) } else { Constraint::ge(e, rhs) }).unwrap();
    }
    let mut obj = LinExpr::new();
    for &v in &vars {
        obj.push(r.random_range(-5i32..=5) as f64, v);
    }
    m.set_objective(if r.random_bool(0.5) { ObjSense::Max } else { ObjSense::Min }, obj).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>()) {
        let m = random_milp(seed);
        let out = solve_milp(&m, &SolverConfig::default()).unwrap();
        match enumerate_optimum(&m) {
            Some(best) => {
                prop_assert_eq!(out.status, MilpStatus::Optimal);
                let inc = out.incumbent.unwrap();
                prop_assert!((inc.objective - best).abs() <= 1e-6, "{} vs {}", inc.objective, best);
                prop_assert!(m.max_violation(&inc.values) <= 1e-6);
            }
            None => prop_assert_eq!(out.status, MilpStatus::Infeasible),
        }
    }

    #[test]
    fn lp_export_is_a_pure_function(seed in any::<u64>()) {
        let m = random_milp(seed);
        prop_assert_eq!(write_lp(&m), write_lp(&m.clone()));
    }
}
