//! Independent reference implementations shared by the integration suites.
//!
//! Everything here goes through nalgebra's general dense routines (LU
//! inverse, determinant, symmetric eigen-decomposition) or finite
//! differences, never through the crate's own Cholesky path.

#![allow(dead_code)]

use std::f64::consts::PI;

use corrml::kernels::{KernelSpec, Nu};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

pub fn random_kernel(rng: &mut ChaCha8Rng, d: usize) -> KernelSpec {
    let leaf = |rng: &mut ChaCha8Rng| {
        let ls: Vec<f64> = (0..d).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
        let var = 0.5 + rng.random::<f64>();
        match rng.random_range(0..4) {
            0 => KernelSpec::rbf(ls, var).unwrap(),
            1 => KernelSpec::matern(Nu::Half, ls, var).unwrap(),
            2 => KernelSpec::matern(Nu::ThreeHalves, ls, var).unwrap(),
            _ => KernelSpec::matern(Nu::FiveHalves, ls, var).unwrap(),
        }
    };
    if rng.random::<bool>() {
        KernelSpec::sum(leaf(rng), leaf(rng)).unwrap()
    } else {
        leaf(rng)
    }
}

/// Gram matrix by direct pairwise evaluation.
pub fn naive_gram(k: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let x: Vec<f64> = a.row(i).iter().copied().collect();
        let y: Vec<f64> = b.row(j).iter().copied().collect();
        k.eval(&x, &y).unwrap()
    })
}

/// NLML through an explicit inverse and LU determinant.
pub fn naive_nlml(k: &KernelSpec, noise: f64, mean: f64, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let kt = naive_gram(k, x, x) + DMatrix::identity(n, n) * noise;
    let inv = kt.clone().try_inverse().unwrap();
    let r = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let quad = (r.transpose() * &inv * &r)[(0, 0)];
    let logdet = kt.lu().determinant().ln();
    0.5 * quad + 0.5 * logdet + 0.5 * n as f64 * (2.0 * PI).ln()
}

/// Posterior mean and noisy variance through an explicit inverse.
pub fn naive_posterior(
    k: &KernelSpec,
    noise: f64,
    mean: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    xs: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let kt = naive_gram(k, x, x) + DMatrix::identity(n, n) * noise;
    let inv = kt.try_inverse().unwrap();
    let ks = naive_gram(k, x, xs);
    let kss = naive_gram(k, xs, xs);
    let r = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    let mu = ks.transpose() * &inv * r;
    let cov = kss - ks.transpose() * &inv * &ks;
    (
        mu.iter().map(|m| m + mean).collect(),
        (0..xs.nrows()).map(|i| cov[(i, i)] + noise).collect(),
    )
}

/// Central difference of `f` along coordinate `i` of `theta`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero references.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-3)
}

pub fn min_max_eigen(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

/// Rows whose six inverse targets (Zn, Ti, Ni, Cu, Fe, Mn) are fixed
/// functions of the base features (rate, environment id, Al, Si, Mg). Cr
/// fills the remainder to 100 at%. About half the rows carry a temperature
/// and a little over half a duration.
pub fn inverse_dataset(n: usize, seed: u64) -> corrml::dataset::Dataset {
    use corrml::dataset::{Basis, Composition, CorrosionSample, Dataset, Environments};
    use corrml::Element;
    let mut r = rng(seed);
    let samples = (0..n)
        .map(|i| {
            let env = r.random_range(0..9u8);
            let (al, si, mg) = (35.0 * r.random::<f64>(), 10.0 * r.random::<f64>(), 15.0 * r.random::<f64>());
            let rate = 0.1 + 50.0 * r.random::<f64>();
            let targets = [
                (Element::ZN, 0.1 * al + 0.5 * si),
                (Element::TI, 0.2 * mg + 0.05 * rate),
                (Element::NI, 0.3 * env as f64 + 0.1 * si),
                (Element::CU, mg / 3.0 + 0.2 * env as f64),
                (Element::FE, 0.05 * al + 0.1 * rate),
                (Element::MN, 0.1 * mg + 0.1 * si),
            ];
            let used: f64 = al + si + mg + targets.iter().map(|t| t.1).sum::<f64>();
            let mut entries = vec![(Element::AL, al), (Element::SI, si), (Element::MG, mg), (Element::CR, 100.0 - used)];
            entries.extend(targets);
            let temperature = (r.random::<f64>() < 0.5).then(|| 5.0 + 75.0 * r.random::<f64>());
            let duration = (r.random::<f64>() < 0.56).then(|| 10.0 + 990.0 * r.random::<f64>());
            CorrosionSample {
                id: format!("inv{i:04}"),
                composition: Composition::from_entries(Basis::Atomic, entries).unwrap(),
                environment: env,
                temperature,
                duration,
                rate,
            }
        })
        .collect();
    Dataset::new(Environments::default(), samples).unwrap()
}
