mod common;

use std::collections::HashSet;

use common::*;
use corrml::trees::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

fn random_data(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, n, d, 1.0);
    let y = (0..n).map(|_| r.random::<f64>() * 10.0).collect();
    (x, y)
}

#[test]
fn unlimited_tree_memorizes() {
    for seed in 0..5 {
        let (x, y) = random_data(seed, 30, 3);
        let t = fit_tree(&x, &y, &TreeLimits::default()).unwrap();
        assert_eq!(t.predict(&x).unwrap(), y);
    }
}

#[test]
fn depth_limit_respected() {
    let (x, y) = random_data(1, 50, 2);
    for d in 0..5 {
        let t = fit_tree(&x, &y, &TreeLimits { max_depth: Some(d), min_samples_leaf: 1 }).unwrap();
        assert!(t.depth() <= d);
    }
}

#[test]
fn bootstrap_in_bag_fraction() {
    let seeds = tree_seeds(17, 100);
    let n = 200;
    let mean_unique = seeds
        .iter()
        .map(|&s| bootstrap_indices(n, &mut ChaCha8Rng::seed_from_u64(s)).into_iter().collect::<HashSet<_>>().len())
        .sum::<usize>() as f64
        / 100.0;
    let expected = n as f64 * (1.0 - (-1.0f64).exp());
    assert!((mean_unique - expected).abs() <= 0.05 * expected, "{mean_unique} vs {expected}");
}

#[test]
fn forest_within_tree_range_and_order_free() {
    let (x, y) = random_data(2, 60, 4);
    let cfg = ForestConfig { n_estimators: 12, max_features: MaxFeatures::Sqrt, seed: 3, ..Default::default() };
    let f = fit_forest(&x, &y, &cfg).unwrap();
    let (q, _) = random_data(99, 20, 4);
    let pred = f.predict(&q).unwrap();
    let per_tree: Vec<Vec<f64>> = f.trees().iter().map(|t| t.predict(&q).unwrap()).collect();
    for (i, p) in pred.iter().enumerate() {
        let lo = per_tree.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
        let hi = per_tree.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
        let reversed: f64 = per_tree.iter().rev().map(|v| v[i]).sum::<f64>() / per_tree.len() as f64;
        assert!((reversed - p).abs() <= 1e-12);
    }
}

#[test]
fn importance_finds_the_signal() {
    let mut r = rng(4);
    let x = random_matrix(&mut r, 200, 4, 1.0);
    let y: Vec<f64> = (0..200).map(|i| x[(i, 0)]).collect();
    let f = fit_forest(&x, &y, &ForestConfig { n_estimators: 50, seed: 1, ..Default::default() }).unwrap();
    let imp = f.feature_importance();
    assert!(imp[0] > 0.8, "{imp:?}");
    assert!((imp.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
}

#[test]
fn constant_feature_gets_zero_importance() {
    let (mut x, y) = random_data(5, 50, 3);
    x.column_mut(1).fill(2.0);
    let f = fit_forest(&x, &y, &ForestConfig { n_estimators: 10, ..Default::default() }).unwrap();
    assert_eq!(f.feature_importance()[1], 0.0);
}

fn sse(m: &GradientBoostedTrees, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    m.predict(x).unwrap().iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum()
}

#[test]
fn gbm_training_error_non_increasing() {
    let (x, y) = random_data(6, 80, 3);
    let mut last = f64::INFINITY;
    for rounds in 0..30 {
        let g = fit_gbm(&x, &y, &GbmConfig { n_rounds: rounds, ..Default::default() }).unwrap();
        let e = sse(&g, &x, &y);
        assert!(e <= last + 1e-9, "round {rounds}: {e} > {last}");
        last = e;
    }
}

#[test]
fn unit_rate_gbm_drives_residuals_to_zero() {
    let (x, y) = random_data(7, 40, 2);
    let cfg = GbmConfig { n_rounds: 40, learning_rate: 1.0, max_depth: None, ..Default::default() };
    let g = fit_gbm(&x, &y, &cfg).unwrap();
    let worst = g.predict(&x).unwrap().iter().zip(&y).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9);
}

#[test]
fn multi_output_columns_are_independent() {
    let (x, y) = random_data(8, 40, 3);
    let other: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let ymat = DMatrix::from_fn(40, 3, |i, j| if j == 1 { other[i] } else { y[i] });
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let cfg = TreeModelConfig::Forest(ForestConfig { n_estimators: 8, seed: 2, ..Default::default() });
    let m = fit_multi_output(&cfg, &x, &ymat, names.clone()).unwrap();
    let p = m.predict(&x).unwrap();
    assert_eq!(p.column(0), p.column(2));

    let mut perturbed = ymat.clone();
    perturbed.column_mut(1).iter_mut().for_each(|v| *v = -*v * 3.0);
    let p2 = fit_multi_output(&cfg, &x, &perturbed, names).unwrap().predict(&x).unwrap();
    assert_eq!(p.column(0), p2.column(0));
    assert_eq!(p.column(2), p2.column(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_piecewise_constant(seed in 0u64..500, row in 0usize..25, nudge in -1.0f64..1.0) {
        let (x, y) = random_data(seed, 25, 2);
        let t = fit_tree(&x, &y, &TreeLimits::default()).unwrap();
        let q: Vec<f64> = x.row(row).iter().copied().collect();
        // largest nudge along feature 0 that crosses no threshold on that feature
        let gap = t.nodes().iter().filter_map(|n| match n {
            Node::Split { feature: 0, threshold, .. } => Some((threshold - q[0]).abs()),
            _ => None,
        }).fold(f64::INFINITY, f64::min);
        let mut moved = q.clone();
        moved[0] += nudge * gap.min(1.0) * 0.99;
        let crosses = t.nodes().iter().any(|n| matches!(n, Node::Split { feature: 0, threshold, .. }
            if (q[0] <= *threshold) != (moved[0] <= *threshold)));
        prop_assume!(!crosses);
        prop_assert_eq!(t.predict_row(&q), t.predict_row(&moved));
    }

    #[test]
    fn fits_are_deterministic(seed in 0u64..200) {
        let (x, y) = random_data(seed, 30, 3);
        let cfg = ForestConfig { n_estimators: 4, max_features: MaxFeatures::Count(2), seed, ..Default::default() };
        prop_assert_eq!(fit_forest(&x, &y, &cfg).unwrap(), fit_forest(&x, &y, &cfg).unwrap());
        let g = GbmConfig { n_rounds: 5, max_features: MaxFeatures::Count(2), seed, ..Default::default() };
        prop_assert_eq!(fit_gbm(&x, &y, &g).unwrap(), fit_gbm(&x, &y, &g).unwrap());
    }
}
