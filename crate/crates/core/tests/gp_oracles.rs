mod common;

use common::*;
use corrml::gpr::{fit_gpr, GprConfig, GprHyper, GprModel, GprProblem, VarianceKind};
use corrml::kernels::{JitterLadder, KernelSpec, Nu, ParamId};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn gram_matches_pairwise_evaluation() {
    let mut r = rng(1);
    for _ in 0..10 {
        let k = random_kernel(&mut r, 3);
        let a = random_matrix(&mut r, 7, 3, 2.0);
        let b = random_matrix(&mut r, 4, 3, 2.0);
        assert!((k.gram(&a, &b).unwrap() - naive_gram(&k, &a, &b)).abs().max() < 1e-14);
        let sym = k.gram_sym(&a).unwrap();
        assert!((&sym - naive_gram(&k, &a, &a)).abs().max() < 1e-14);
        assert_eq!(sym, sym.transpose());
    }
}

#[test]
fn gram_diagonal_is_variance() {
    let k = KernelSpec::matern(Nu::ThreeHalves, vec![0.3, 0.9], 2.5).unwrap();
    let x = random_matrix(&mut rng(2), 6, 2, 1.0);
    let g = k.gram_sym(&x).unwrap();
    assert!(g.diagonal().iter().all(|&v| v == 2.5));
}

#[test]
fn sum_gram_is_sum_of_grams() {
    let mut r = rng(3);
    let a = KernelSpec::rbf(vec![0.7, 1.1, 0.4], 0.9).unwrap();
    let b = KernelSpec::matern(Nu::FiveHalves, vec![1.3, 0.6, 2.0], 1.4).unwrap();
    let s = KernelSpec::sum(a.clone(), b.clone()).unwrap();
    let x = random_matrix(&mut r, 12, 3, 1.5);
    let diff = s.gram_sym(&x).unwrap() - (a.gram_sym(&x).unwrap() + b.gram_sym(&x).unwrap());
    assert!(diff.abs().max() <= 1e-12);
}

#[test]
fn random_grams_are_psd() {
    let mut r = rng(4);
    for _ in 0..20 {
        let k = random_kernel(&mut r, 4);
        let x = random_matrix(&mut r, 20, 4, 2.0);
        let (min, max) = min_max_eigen(&k.gram_sym(&x).unwrap());
        assert!(min >= -1e-8 * max, "min {min} max {max}");
    }
}

#[test]
fn gram_grad_matches_finite_differences() {
    let mut r = rng(5);
    for _ in 0..10 {
        let k = random_kernel(&mut r, 3);
        let x = random_matrix(&mut r, 8, 3, 1.5);
        let theta = k.log_params();
        for p in 0..theta.len() {
            let g = k.gram_grad(&x, ParamId(p)).unwrap();
            let h = 1e-5;
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[p] += h;
            minus[p] -= h;
            let kp = k.with_log_params(&plus).unwrap().gram_sym(&x).unwrap();
            let km = k.with_log_params(&minus).unwrap().gram_sym(&x).unwrap();
            let fd = (kp - km) / (2.0 * h);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!(rel_err(*a, *b) <= 1e-5, "param {p}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn contracted_gradient_matches_full_gram_gradients() {
    let mut r = rng(6);
    let k = random_kernel(&mut r, 3);
    let x = random_matrix(&mut r, 9, 3, 1.0);
    let w0 = random_matrix(&mut r, 9, 9, 1.0);
    let w = &w0 + w0.transpose();
    let fused = k.contract_grad(&x, &w).unwrap();
    for (p, f) in fused.iter().enumerate() {
        let g = k.gram_grad(&x, ParamId(p)).unwrap();
        let direct: f64 = g.component_mul(&w).sum();
        assert!((f - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}

fn random_problem(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>, GprHyper) {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, n, d, 1.5);
    let y: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let hyper = GprHyper {
        kernel: random_kernel(&mut r, d),
        noise_variance: 0.05 + 0.3 * r.random::<f64>(),
        mean: r.random::<f64>() - 0.5,
    };
    (x, y, hyper)
}

#[test]
fn nlml_matches_dense_oracle() {
    for seed in 0..20 {
        let (x, y, h) = random_problem(seed, 6, 2);
        let ladder = JitterLadder::default();
        let got = GprProblem::new(&x, &y, &ladder).unwrap().nlml(&h).unwrap();
        let want = naive_nlml(&h.kernel, h.noise_variance, h.mean, &x, &y);
        assert!((got - want).abs() <= 1e-8, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn nlml_grad_matches_finite_differences() {
    for seed in 0..10 {
        let (x, y, h) = random_problem(100 + seed, 8, 2);
        let ladder = JitterLadder(vec![0.0]);
        let p = GprProblem::new(&x, &y, &ladder).unwrap();
        let (_, grad) = p.nlml_grad(&h).unwrap();
        let theta = h.to_vec();
        let f = |t: &[f64]| p.nlml(&h.with_vec(t).unwrap()).unwrap();
        for i in 0..theta.len() {
            let fd = central_diff(f, &theta, i, 1e-5);
            assert!(rel_err(grad[i], fd) <= 1e-4, "seed {seed} param {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn noise_gradient_is_trace_identity() {
    let (x, y, h) = random_problem(7, 6, 2);
    let ladder = JitterLadder(vec![0.0]);
    let (_, grad) = GprProblem::new(&x, &y, &ladder).unwrap().nlml_grad(&h).unwrap();
    let n = y.len();
    let kt = naive_gram(&h.kernel, &x, &x) + DMatrix::identity(n, n) * h.noise_variance;
    let inv = kt.try_inverse().unwrap();
    let r = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v - h.mean));
    let alpha = &inv * r;
    let want = 0.5 * (inv - &alpha * alpha.transpose()).trace() * h.noise_variance;
    let got = grad[h.kernel.n_params()];
    assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
}

#[test]
fn gradient_vanishes_at_single_point_optimum() {
    // one point: NLML = ½(y−c)²/s + ½ ln s + const, stationary in c at c = y
    let x = DMatrix::from_element(1, 1, 0.0);
    let y = [2.0];
    let ladder = JitterLadder(vec![0.0]);
    let p = GprProblem::new(&x, &y, &ladder).unwrap();
    let h = GprHyper {
        kernel: KernelSpec::rbf(vec![1.0], 0.6).unwrap(),
        noise_variance: 0.4,
        mean: 2.0,
    };
    let (_, g) = p.nlml_grad(&h).unwrap();
    // the variance terms pull toward s → 0 but the mean gradient is zero
    assert_eq!(g[2 + 1], 0.0);
}

#[test]
fn posterior_matches_dense_oracle() {
    for seed in 0..20 {
        let (x, y, h) = random_problem(200 + seed, 6, 2);
        let xs = random_matrix(&mut rng(300 + seed), 4, 2, 2.0);
        let m = GprModel::from_hyper(x.clone(), y.clone(), h.clone(), JitterLadder::default(), VarianceKind::Noisy)
            .unwrap();
        let (mu, var) = m.predict(&xs).unwrap();
        let (mu0, var0) = naive_posterior(&h.kernel, h.noise_variance, h.mean, &x, &y, &xs);
        for i in 0..4 {
            assert!((mu[i] - mu0[i]).abs() <= 1e-8);
            assert!((var[i] - var0[i]).abs() <= 1e-8);
        }
    }
}

#[test]
fn near_noiseless_gp_interpolates() {
    let (x, y, mut h) = random_problem(9, 10, 2);
    h.noise_variance = 1e-10;
    h.kernel = KernelSpec::matern(Nu::FiveHalves, vec![0.8, 0.8], 1.0).unwrap();
    let m = GprModel::from_hyper(x.clone(), y.clone(), h, JitterLadder::default(), VarianceKind::Noisy).unwrap();
    assert_eq!(m.jitter(), 0.0);
    let (mu, _) = m.predict(&x).unwrap();
    for (a, b) in mu.iter().zip(&y) {
        assert!((a - b).abs() <= 1e-4);
    }
}

#[test]
fn far_queries_revert_to_prior() {
    let (x, y, h) = random_problem(10, 10, 2);
    let far = DMatrix::from_row_slice(1, 2, &[1e3, -1e3]);
    let m = GprModel::from_hyper(x, y, h.clone(), JitterLadder::default(), VarianceKind::Noisy).unwrap();
    let (mu, var) = m.predict(&far).unwrap();
    assert!((mu[0] - h.mean).abs() <= 1e-3);
    assert!((var[0] - (h.kernel.prior_variance() + h.noise_variance)).abs() <= 1e-3);
}

#[test]
fn variance_at_training_points_below_prior() {
    let (x, y, h) = random_problem(11, 12, 3);
    let prior = h.kernel.prior_variance() + h.noise_variance;
    let m = GprModel::from_hyper(x.clone(), y, h, JitterLadder::default(), VarianceKind::Noisy).unwrap();
    let (_, var) = m.predict(&x).unwrap();
    assert!(var.iter().all(|&v| v > 0.0 && v <= prior));
}

#[test]
fn duplicate_training_point_does_not_raise_variance() {
    let (x, y, h) = random_problem(12, 8, 2);
    let q = x.rows(3, 1).into_owned();
    let m = GprModel::from_hyper(x.clone(), y.clone(), h.clone(), JitterLadder::default(), VarianceKind::Latent).unwrap();
    let (_, v1) = m.predict(&q).unwrap();
    let x2 = DMatrix::from_fn(9, 2, |i, j| if i < 8 { x[(i, j)] } else { x[(3, j)] });
    let mut y2 = y.clone();
    y2.push(y[3]);
    let m2 = GprModel::from_hyper(x2, y2, h, JitterLadder::default(), VarianceKind::Latent).unwrap();
    let (_, v2) = m2.predict(&q).unwrap();
    assert!(v2[0] <= v1[0] + 1e-12);
}

/// Draws `n` 1-D points from a GP prior with the given kernel plus noise.
fn gp_prior_sample(seed: u64, n: usize, k: &KernelSpec, noise_sd: f64) -> (DMatrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, 1, |_, _| r.random::<f64>() * 10.0);
    let cov = k.gram_sym(&x).unwrap() + DMatrix::identity(n, n) * 1e-9;
    let l = cov.cholesky().unwrap().l();
    let z = nalgebra::DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let f = l * z;
    let y = f.iter().map(|v| v + noise_sd * r.sample::<f64, _>(StandardNormal)).collect();
    (x, y)
}

#[test]
fn recovers_prior_lengthscale() {
    let truth = KernelSpec::rbf(vec![1.5], 1.0).unwrap();
    let template = KernelSpec::rbf(vec![1.0], 1.0).unwrap();
    let mut log_ratios = Vec::new();
    for seed in 0..5 {
        let (x, y) = gp_prior_sample(seed, 60, &truth, 0.1);
        let m = fit_gpr(&x, &y, &template, &GprConfig::default()).unwrap();
        assert!(m.nlml() <= m.history()[0]);
        let ls = match m.kernel() {
            KernelSpec::Rbf { lengthscales, .. } => lengthscales[0],
            _ => unreachable!(),
        };
        log_ratios.push((ls / 1.5).ln());
    }
    let mean_log_ratio = log_ratios.iter().sum::<f64>() / log_ratios.len() as f64;
    assert!(mean_log_ratio.abs() <= 2f64.ln(), "{log_ratios:?}");
}

#[test]
fn nlml_decreases_over_training_windows() {
    let template = KernelSpec::matern(Nu::ThreeHalves, vec![1.0], 1.0).unwrap();
    let truth = KernelSpec::matern(Nu::ThreeHalves, vec![2.0], 1.0).unwrap();
    let mut good = 0;
    for seed in 0..10 {
        let (x, y) = gp_prior_sample(50 + seed, 40, &truth, 0.2);
        let m = fit_gpr(&x, &y, &template, &GprConfig::default()).unwrap();
        let h = m.history();
        if h.windows(51).all(|w| w[50] <= w[0] + 1e-9) {
            good += 1;
        }
    }
    assert!(good >= 9, "{good}/10");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_symmetric_and_stationary(
        xs in prop::collection::vec(-3.0f64..3.0, 3),
        ys in prop::collection::vec(-3.0f64..3.0, 3),
        t in prop::collection::vec(-5.0f64..5.0, 3),
        which in 0usize..4,
    ) {
        let ls = vec![0.7, 1.3, 2.1];
        let k = match which {
            0 => KernelSpec::rbf(ls, 1.3).unwrap(),
            1 => KernelSpec::matern(Nu::Half, ls, 1.3).unwrap(),
            2 => KernelSpec::matern(Nu::ThreeHalves, ls, 1.3).unwrap(),
            _ => KernelSpec::sum(KernelSpec::rbf(ls.clone(), 0.4).unwrap(), KernelSpec::matern(Nu::FiveHalves, ls, 0.9).unwrap()).unwrap(),
        };
        prop_assert_eq!(k.eval(&xs, &ys).unwrap(), k.eval(&ys, &xs).unwrap());
        let xt: Vec<f64> = xs.iter().zip(&t).map(|(a, b)| a + b).collect();
        let yt: Vec<f64> = ys.iter().zip(&t).map(|(a, b)| a + b).collect();
        prop_assert!((k.eval(&xs, &ys).unwrap() - k.eval(&xt, &yt).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ard_scale_invariance(
        xs in prop::collection::vec(-3.0f64..3.0, 2),
        ys in prop::collection::vec(-3.0f64..3.0, 2),
        c in 0.1f64..10.0,
        d in 0usize..2,
    ) {
        let k = KernelSpec::matern(Nu::FiveHalves, vec![0.9, 1.7], 1.1).unwrap();
        let mut ls = vec![0.9, 1.7];
        ls[d] *= c;
        let ks = KernelSpec::matern(Nu::FiveHalves, ls, 1.1).unwrap();
        let (mut xs2, mut ys2) = (xs.clone(), ys.clone());
        xs2[d] *= c;
        ys2[d] *= c;
        prop_assert!((k.eval(&xs, &ys).unwrap() - ks.eval(&xs2, &ys2).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn matern_smoothing_order(r in 0.01f64..0.99) {
        let at = |k: KernelSpec| k.eval(&[0.0], &[r]).unwrap();
        let m12 = at(KernelSpec::matern(Nu::Half, vec![1.0], 1.0).unwrap());
        let m32 = at(KernelSpec::matern(Nu::ThreeHalves, vec![1.0], 1.0).unwrap());
        let m52 = at(KernelSpec::matern(Nu::FiveHalves, vec![1.0], 1.0).unwrap());
        let rbf = at(KernelSpec::rbf(vec![1.0], 1.0).unwrap());
        prop_assert!((m12 - (-r).exp()).abs() <= 1e-12);
        prop_assert!(m12 < m32 && m32 < m52 && m52 < rbf);
    }
}
