mod common;

use common::*;
use corrml::neural::{backward, huber_loss, train_dnn, Activation, DenseLayer, DenseNetwork, TrainConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn loss_at(net: &DenseNetwork, p: &[f64], x: &DMatrix<f64>, y: &[f64], delta: f64) -> f64 {
    let mut n = net.clone();
    n.set_params(p).unwrap();
    huber_loss(y, &n.forward_batch(x).unwrap(), delta).unwrap()
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut net = DenseNetwork::new(3, &[2], seed).unwrap();
        // nonzero biases keep every ReLU away from its kink
        let mut p = net.params();
        for v in p.iter_mut() {
            *v += 0.3 * (r.random::<f64>() - 0.5);
        }
        net.set_params(&p).unwrap();
        let x = random_matrix(&mut r, 4, 3, 1.0);
        let y: Vec<f64> = (0..4).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        for delta in [0.1, 10.0] {
            let g = backward(&net, &x, &y, delta).unwrap();
            for i in 0..p.len() {
                let fd = central_diff(|t| loss_at(&net, t, &x, &y, delta), &p, i, 1e-5);
                assert!(rel_err(g.grad[i], fd) <= 1e-5, "seed {seed} δ {delta} param {i}: {} vs {fd}", g.grad[i]);
            }
        }
    }
}

#[test]
fn zero_error_gives_zero_gradient() {
    let net = DenseNetwork::new(2, &[3], 4).unwrap();
    let x = random_matrix(&mut rng(4), 5, 2, 1.0);
    let y = net.forward_batch(&x).unwrap();
    let g = backward(&net, &x, &y, 0.1).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.iter().all(|&v| v == 0.0));
}

#[test]
fn output_gradient_is_clipped_beyond_delta() {
    // one identity unit: ŷ = w·x + b, so ∂L/∂b = −clip(e, ±δ)
    let net = DenseNetwork::from_layers(vec![DenseLayer {
        weights: DMatrix::from_element(1, 1, 0.0),
        bias: vec![0.0],
        activation: Activation::Identity,
    }])
    .unwrap();
    let x = DMatrix::from_element(1, 1, 1.0);
    let g5 = backward(&net, &x, &[5.0], 0.1).unwrap();
    let g50 = backward(&net, &x, &[50.0], 0.1).unwrap();
    assert_eq!(g5.grad, g50.grad);
    assert_eq!(g5.grad[1], -0.1);
}

#[test]
fn linear_smoke_problem() {
    let x = DMatrix::from_fn(50, 1, |i, _| -1.0 + 2.0 * i as f64 / 49.0);
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
    let mut monotone = 0;
    for seed in 0..10 {
        let cfg = TrainConfig { seed, ..Default::default() };
        let t = train_dnn(&x, &y, &cfg).unwrap();
        if seed == 0 {
            assert!(t.history.last().unwrap() < &(t.history[0] / 10.0), "{:?}", (t.history[0], t.history.last()));
            assert_eq!(t, train_dnn(&x, &y, &cfg).unwrap());
        }
        if t.history.windows(51).all(|w| w[50] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 8, "{monotone}/10");
}

#[test]
fn plateau_stop_truncates_history() {
    let x = DMatrix::from_fn(20, 1, |i, _| i as f64 / 19.0);
    let y = vec![0.5; 20];
    let cfg = TrainConfig {
        epochs: 5000,
        learning_rate: 0.01,
        plateau: Some(Default::default()),
        ..Default::default()
    };
    let t = train_dnn(&x, &y, &cfg).unwrap();
    assert!(t.history.len() < 5001);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bias_free_relu_net_is_positively_homogeneous(
        seed in 0u64..1000,
        xs in prop::collection::vec(-2.0f64..2.0, 4),
        c in 0.01f64..50.0,
    ) {
        let net = DenseNetwork::new(4, &[8, 4], seed).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|v| c * v).collect();
        let a = net.forward(&scaled).unwrap();
        let b = c * net.forward(&xs).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }

    #[test]
    fn huber_bounded_by_half_square(e in -5.0f64..5.0, delta in 0.01f64..2.0) {
        let l = huber_loss(&[e], &[0.0], delta).unwrap();
        prop_assert!(l >= 0.0 && l <= 0.5 * e * e + 1e-15);
    }
}
