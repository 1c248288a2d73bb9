mod common;

use optswitch::regress::{fit, Dataset, FittedModel, Hyperparams, KdTree, ModelSpec, MODEL_NAMES};
use proptest::prelude::*;

#[test]
fn kdtree_agrees_with_brute_force() {
    assert_eq!(common::kdtree_mismatches(1), 0);
}

#[test]
fn ridge_with_vanishing_penalty_is_ols() {
    let gap = common::ridge_ols_gap(2);
    assert!(gap <= 1e-6, "gap {gap}");
}

#[test]
fn lasso_satisfies_kkt() {
    for lambda in [0.01, 0.05, 0.3] {
        let (kkt, _) = common::lasso_kkt_residual(3, lambda);
        assert!(kkt <= 1e-8, "lambda {lambda}: residual {kkt}");
    }
    let (_, zeros) = common::lasso_kkt_residual(3, 0.05);
    assert!(zeros > 0);
}

#[test]
fn mlp_gradient_matches_central_differences() {
    for seed in [4, 5, 6] {
        let err = common::mlp_gradient_error(seed);
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn full_rank_pca_is_an_isometry() {
    let (distortion, round_trip, differ) = common::pca_isometry(7);
    assert!(distortion <= 1e-12, "{distortion}");
    assert!(round_trip <= 1e-12, "{round_trip}");
    assert_eq!(differ, 0);
}

fn toy_data(m: usize) -> Dataset {
    let xs = common::uniform_rows(21, m, 2, -1.0, 1.0);
    let ys = xs.chunks_exact(2).map(|x| x[0] * x[0] - 0.5 * x[1]).collect();
    Dataset::new(xs, 2, ys).unwrap()
}

#[test]
fn every_family_round_trips_through_bytes() {
    let data = toy_data(400);
    let queries = common::uniform_rows(22, 50, 2, -1.0, 1.0);
    for name in MODEL_NAMES {
        let mut spec = ModelSpec::default_for(name, 2).unwrap();
        match &mut spec.hyper {
            Hyperparams::Mlp { epochs, .. } => *epochs = 3,
            Hyperparams::GradBoost { n_iter, min_data_in_leaf, .. } => {
                *n_iter = 20;
                *min_data_in_leaf = 20;
            }
            _ => {}
        }
        let model = fit(&spec, &data, None, 5).unwrap();
        let back = FittedModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(model.batch_predict(&queries).unwrap(), back.batch_predict(&queries).unwrap(), "{name}");
        let again = fit(&spec, &data, None, 5).unwrap();
        assert_eq!(model.batch_predict(&queries).unwrap(), again.batch_predict(&queries).unwrap(), "{name}");
    }
}

#[test]
fn prediction_rejects_wrong_dimension() {
    let model = fit(&ModelSpec::default_for("knn", 2).unwrap(), &toy_data(50), None, 0).unwrap();
    assert!(model.predict(&[0.0]).unwrap_err().is_validation());
    assert!(model.batch_predict(&[0.0, 1.0, 2.0]).unwrap_err().is_validation());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn knn_prediction_lies_within_target_range(seed in 0u64..1000, k in 1usize..20) {
        let data = toy_data(120);
        let model = fit(&ModelSpec { hyper: Hyperparams::Knn { k }, standardize: true }, &data, None, seed).unwrap();
        let lo = data.targets().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.targets().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for q in common::uniform_rows(seed, 20, 2, -2.0, 2.0).chunks_exact(2) {
            let p = model.predict(q).unwrap();
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn kdtree_nearest_is_sorted_and_exact(seed in 0u64..1000, dim in 1usize..5, k in 1usize..12) {
        let pts = common::uniform_rows(seed, 200, dim, 0.0, 1.0);
        let tree = KdTree::build(&pts, dim, 200);
        let q = common::uniform_rows(seed + 1, 1, dim, 0.0, 1.0);
        let mut out = Vec::new();
        tree.nearest(&q, k, &mut out);
        prop_assert_eq!(out.len(), k);
        prop_assert!(out.windows(2).all(|w| w[0].0 <= w[1].0));
        let mut d: Vec<f64> = pts.chunks_exact(dim)
            .map(|p| p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        d.sort_by(f64::total_cmp);
        prop_assert_eq!(out[k - 1].0, d[k - 1]);
    }

    #[test]
    fn ols_recovers_exact_polynomials(c0 in -3.0..3.0f64, c1 in -3.0..3.0f64, c2 in -3.0..3.0f64) {
        let xs = common::uniform_rows(9, 60, 1, -2.0, 2.0);
        let ys: Vec<f64> = xs.iter().map(|x| c0 + c1 * x + c2 * x * x).collect();
        let m = optswitch::regress::LinearModel::fit_ols(&xs, 1, &ys, 2).unwrap();
        for (got, want) in m.coefficients().iter().zip([c0, c1, c2]) {
            prop_assert!((got - want).abs() < 1e-9);
        }
    }
}
