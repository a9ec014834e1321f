//! Exact Gaussian process regression with a constant mean and Gaussian noise.
//!
//! Training minimizes the negative log marginal likelihood
//!
//! ```text
//! NLML = ½ (y − c)ᵀ K̃⁻¹ (y − c) + Σ ln L_ii + (n/2) ln 2π,   K̃ = K + σ_n² I = L Lᵀ
//! ```
//!
//! with Adam over `[kernel log-params…, ln σ_n², c]`. Gradients use
//! `∂NLML/∂θ = ½ tr((K̃⁻¹ − ααᵀ) ∂K̃/∂θ)` and `∂NLML/∂c = −1ᵀα`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kernels::{cholesky_jitter, JitterLadder, KernelError, KernelSpec};
use crate::linalg::CholeskyFactor;
use crate::optim::{AdamState, OptimError};
use crate::preprocess::{log_transform, PreprocessError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GprError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Transform(#[from] PreprocessError),
    #[error("need at least {needed} training points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{rows} input rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("query has {got} features, model was trained on {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("noise variance must be positive and finite, got {0}")]
    BadNoise(f64),
    #[error("hyperparameter vector has {got} entries, expected {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("training never reached a factorizable state: {0}")]
    NeverValid(KernelError),
    #[error("training-data checksum mismatch (file says {expected}, data hashes to {actual})")]
    ChecksumMismatch { expected: String, actual: String },
}

/// Kernel, noise variance and constant mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub mean: f64,
}

impl GprHyper {
    pub fn n_params(&self) -> usize {
        self.kernel.n_params() + 2
    }

    /// `[kernel log-params…, ln σ_n², c]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.kernel.log_params();
        v.push(self.noise_variance.ln());
        v.push(self.mean);
        v
    }

    pub fn with_vec(&self, theta: &[f64]) -> Result<GprHyper, GprError> {
        let expected = self.n_params();
        if theta.len() != expected {
            return Err(GprError::ParamCount { expected, got: theta.len() });
        }
        let k = self.kernel.n_params();
        let noise_variance = theta[k].exp();
        if !(noise_variance > 0.0 && noise_variance.is_finite()) || !theta[k + 1].is_finite() {
            return Err(GprError::BadNoise(noise_variance));
        }
        Ok(GprHyper {
            kernel: self.kernel.with_log_params(&theta[..k])?,
            noise_variance,
            mean: theta[k + 1],
        })
    }
}

/// Training inputs and targets against which hyperparameters are scored.
#[derive(Debug, Clone, Copy)]
pub struct GprProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub ladder: &'a JitterLadder,
}

/// Factorization of `K̃` and the solved coefficients for one hyperparameter set.
struct Solved {
    chol: CholeskyFactor,
    jitter: f64,
    alpha: Vec<f64>,
    residual: Vec<f64>,
}

impl<'a> GprProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64], ladder: &'a JitterLadder) -> Result<Self, GprError> {
        if x.nrows() != y.len() {
            return Err(GprError::LengthMismatch { rows: x.nrows(), targets: y.len() });
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(GprError::NonFinite);
        }
        Ok(GprProblem { x, y, ladder })
    }

    fn solve(&self, hyper: &GprHyper) -> Result<Solved, GprError> {
        if !(hyper.noise_variance > 0.0 && hyper.noise_variance.is_finite()) {
            return Err(GprError::BadNoise(hyper.noise_variance));
        }
        let mut k = hyper.kernel.gram_sym(self.x)?;
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_variance;
        }
        let jittered = cholesky_jitter(&k, self.ladder)?;
        let residual: Vec<f64> = self.y.iter().map(|v| v - hyper.mean).collect();
        let alpha = jittered.factor.solve(&residual);
        Ok(Solved {
            chol: jittered.factor,
            jitter: jittered.jitter,
            alpha,
            residual,
        })
    }

    fn nlml_of(&self, s: &Solved) -> f64 {
        let n = self.y.len() as f64;
        let quad: f64 = s.residual.iter().zip(&s.alpha).map(|(r, a)| r * a).sum();
        0.5 * quad + s.chol.half_log_det() + 0.5 * n * (2.0 * PI).ln()
    }

    pub fn nlml(&self, hyper: &GprHyper) -> Result<f64, GprError> {
        Ok(self.nlml_of(&self.solve(hyper)?))
    }

    /// NLML and its gradient over [`GprHyper::to_vec`].
    pub fn nlml_grad(&self, hyper: &GprHyper) -> Result<(f64, Vec<f64>), GprError> {
        let s = self.solve(hyper)?;
        let value = self.nlml_of(&s);
        let n = self.y.len();
        // W = ½ (K̃⁻¹ − ααᵀ)
        let mut w = s.chol.inverse();
        for j in 0..n {
            for i in 0..n {
                w[(i, j)] = 0.5 * (w[(i, j)] - s.alpha[i] * s.alpha[j]);
            }
        }
        let mut grad = hyper.kernel.contract_grad(self.x, &w)?;
        grad.push(w.diagonal().sum() * hyper.noise_variance);
        grad.push(-s.alpha.iter().sum::<f64>());
        Ok((value, grad))
    }
}

/// Which predictive variance to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    /// Variance of the latent function.
    Latent,
    /// Latent variance plus the noise variance.
    #[default]
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub ladder: JitterLadder,
    pub variance: VarianceKind,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            epochs: 200,
            learning_rate: 0.05,
            ladder: JitterLadder::default(),
            variance: VarianceKind::Noisy,
        }
    }
}

/// A trained exact GP.
#[derive(Debug, Clone)]
pub struct GprModel {
    x_train: DMatrix<f64>,
    y_train: Vec<f64>,
    hyper: GprHyper,
    chol: CholeskyFactor,
    jitter: f64,
    alpha: Vec<f64>,
    ladder: JitterLadder,
    variance: VarianceKind,
    /// NLML before each Adam step.
    history: Vec<f64>,
}

impl GprModel {
    /// Caches the factorization for fixed hyperparameters.
    pub fn from_hyper(
        x: DMatrix<f64>,
        y: Vec<f64>,
        hyper: GprHyper,
        ladder: JitterLadder,
        variance: VarianceKind,
    ) -> Result<GprModel, GprError> {
        if x.nrows() == 0 {
            return Err(GprError::TooFewPoints { needed: 1, got: 0 });
        }
        let problem = GprProblem::new(&x, &y, &ladder)?;
        if hyper.kernel.dim() != x.ncols() {
            return Err(KernelError::DimensionMismatch { expected: hyper.kernel.dim(), got: x.ncols() }.into());
        }
        let s = problem.solve(&hyper)?;
        Ok(GprModel {
            x_train: x,
            y_train: y,
            hyper,
            chol: s.chol,
            jitter: s.jitter,
            alpha: s.alpha,
            ladder,
            variance,
            history: Vec::new(),
        })
    }

    pub fn hyper(&self) -> &GprHyper {
        &self.hyper
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.hyper.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.hyper.noise_variance
    }

    pub fn mean(&self) -> f64 {
        self.hyper.mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y_train
    }

    pub fn n_features(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn variance_kind(&self) -> VarianceKind {
        self.variance
    }

    /// NLML at the cached hyperparameters.
    pub fn nlml(&self) -> f64 {
        let n = self.y_train.len() as f64;
        let quad: f64 = self
            .y_train
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| (y - self.hyper.mean) * a)
            .sum();
        0.5 * quad + self.chol.half_log_det() + 0.5 * n * (2.0 * PI).ln()
    }

    /// Posterior mean and variance at each row of `x_star`.
    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), GprError> {
        self.predict_with(x_star, self.variance)
    }

    pub fn predict_with(
        &self,
        x_star: &DMatrix<f64>,
        kind: VarianceKind,
    ) -> Result<(Vec<f64>, Vec<f64>), GprError> {
        if x_star.ncols() != self.n_features() {
            return Err(GprError::DimensionMismatch {
                expected: self.n_features(),
                got: x_star.ncols(),
            });
        }
        let k_star = self.hyper.kernel.gram(&self.x_train, x_star)?;
        let prior = self.hyper.kernel.prior_variance();
        let floor = prior * f64::EPSILON;
        let mut means = Vec::with_capacity(x_star.nrows());
        let mut vars = Vec::with_capacity(x_star.nrows());
        for col in k_star.column_iter() {
            let kc: Vec<f64> = col.iter().copied().collect();
            let mu = self.hyper.mean + kc.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
            let v = self.chol.solve_lower(&kc);
            let latent = (prior - v.iter().map(|e| e * e).sum::<f64>()).max(floor);
            means.push(mu);
            vars.push(match kind {
                VarianceKind::Latent => latent,
                VarianceKind::Noisy => latent + self.hyper.noise_variance,
            });
        }
        Ok((means, vars))
    }

    pub fn to_file(&self) -> GprModelFile {
        GprModelFile {
            kernel: self.hyper.kernel.clone(),
            mean: self.hyper.mean,
            noise_variance: self.hyper.noise_variance,
            ladder: self.ladder.clone(),
            variance: self.variance,
            x_train: self.x_train.row_iter().map(|r| r.iter().copied().collect()).collect(),
            y_train: self.y_train.clone(),
            checksum: training_checksum(&self.x_train, &self.y_train),
        }
    }

    pub fn from_file(file: GprModelFile) -> Result<GprModel, GprError> {
        let d = file.kernel.dim();
        if file.x_train.iter().any(|r| r.len() != d) {
            return Err(GprError::DimensionMismatch {
                expected: d,
                got: file.x_train.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0),
            });
        }
        let n = file.x_train.len();
        let x = DMatrix::from_fn(n, d, |i, j| file.x_train[i][j]);
        let actual = training_checksum(&x, &file.y_train);
        if actual != file.checksum {
            return Err(GprError::ChecksumMismatch { expected: file.checksum, actual });
        }
        GprModel::from_hyper(
            x,
            file.y_train,
            GprHyper {
                kernel: file.kernel,
                noise_variance: file.noise_variance,
                mean: file.mean,
            },
            file.ladder,
            file.variance,
        )
    }
}

/// Serialized GP. The factorization is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GprModelFile {
    pub kernel: KernelSpec,
    pub mean: f64,
    pub noise_variance: f64,
    pub ladder: JitterLadder,
    pub variance: VarianceKind,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    /// SHA-256 over the little-endian bytes of the shape, inputs (row-major)
    /// and targets.
    pub checksum: String,
}

pub fn training_checksum(x: &DMatrix<f64>, y: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for row in x.row_iter() {
        for v in row.iter() {
            h.update(v.to_le_bytes());
        }
    }
    for v in y {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn population_variance(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Starting hyperparameters: unit lengthscales, leaf variances splitting
/// `var(y)`, noise `0.1·var(y)`, mean `mean(y)`.
pub fn initial_hyper(template: &KernelSpec, y: &[f64]) -> Result<GprHyper, GprError> {
    let (mean, var) = population_variance(y);
    let var = if var > 0.0 && var.is_finite() { var } else { 1.0 };
    Ok(GprHyper {
        kernel: template.reinitialized(1.0, var)?,
        noise_variance: 0.1 * var,
        mean,
    })
}

/// Fits hyperparameters by Adam on the NLML for `cfg.epochs` steps.
///
/// If the covariance stops being factorizable part way, training halts and
/// the last factorizable state is kept.
pub fn fit_gpr(
    x: &DMatrix<f64>,
    y: &[f64],
    template: &KernelSpec,
    cfg: &GprConfig,
) -> Result<GprModel, GprError> {
    if y.len() < 2 {
        return Err(GprError::TooFewPoints { needed: 2, got: y.len() });
    }
    if template.dim() != x.ncols() {
        return Err(KernelError::DimensionMismatch { expected: template.dim(), got: x.ncols() }.into());
    }
    let problem = GprProblem::new(x, y, &cfg.ladder)?;
    let start = initial_hyper(template, y)?;
    let mut theta = start.to_vec();
    let mut adam = AdamState::new(theta.len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_valid: Option<Vec<f64>> = None;

    for epoch in 0..cfg.epochs {
        let evaluated = start.with_vec(&theta).and_then(|h| problem.nlml_grad(&h));
        let (value, grad) = match evaluated {
            Ok(v) => v,
            Err(e) => {
                log::warn!("GP training halted at epoch {epoch}: {e}");
                break;
            }
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            log::warn!("GP training halted at epoch {epoch}: non-finite objective");
            break;
        }
        history.push(value);
        last_valid = Some(theta.clone());
        adam.step(&mut theta, &grad)?;
    }

    let build = |theta: &[f64]| -> Result<GprModel, GprError> {
        // exp(ln v) need not return v bit-for-bit, so untouched state is reused
        let hyper = if adam.t == 0 { start.clone() } else { start.with_vec(theta)? };
        GprModel::from_hyper(x.clone(), y.to_vec(), hyper, cfg.ladder.clone(), cfg.variance)
    };
    let mut model = match build(&theta) {
        Ok(m) => m,
        Err(e) => match &last_valid {
            Some(prev) => build(prev)?,
            None => {
                return Err(match e {
                    GprError::Kernel(k) => GprError::NeverValid(k),
                    other => other,
                })
            }
        },
    };
    model.history = history;
    Ok(model)
}

/// How log-space predictions are mapped back to rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackTransform {
    /// `exp(μ)`, the median of the log-normal predictive.
    #[default]
    Median,
    /// `exp(μ + σ²/2)`, its mean.
    Mean,
}

/// A GP fitted to `ln(y + shift)`.
#[derive(Debug, Clone)]
pub struct LogGprModel {
    pub inner: GprModel,
    pub shift: f64,
    pub back_transform: BackTransform,
}

pub fn fit_log_gpr(
    x: &DMatrix<f64>,
    y: &[f64],
    template: &KernelSpec,
    cfg: &GprConfig,
    shift: f64,
    back_transform: BackTransform,
) -> Result<LogGprModel, GprError> {
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(PreprocessError::NonPositive(shift).into());
    }
    let z = log_transform(y, shift)?;
    Ok(LogGprModel {
        inner: fit_gpr(x, &z, template, cfg)?,
        shift,
        back_transform,
    })
}

/// Maps a log-space predictive mean and variance back to a rate, clamped at 0.
pub fn back_transform(mu: f64, var: f64, shift: f64, mode: BackTransform) -> f64 {
    let v = match mode {
        BackTransform::Median => mu.exp(),
        BackTransform::Mean => (mu + 0.5 * var).exp(),
    };
    (v - shift).max(0.0)
}

impl LogGprModel {
    /// Rate predictions (never negative).
    pub fn predict(&self, x_star: &DMatrix<f64>) -> Result<Vec<f64>, GprError> {
        let (mu, var) = self.inner.predict(x_star)?;
        Ok(mu
            .iter()
            .zip(&var)
            .map(|(&m, &v)| back_transform(m, v, self.shift, self.back_transform))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Nu;

    fn line(n: usize) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.5);
        let y = (0..n).map(|i| (i as f64 * 0.5).sin()).collect();
        (x, y)
    }

    #[test]
    fn single_point_nlml() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let y = [3.0];
        let ladder = JitterLadder(vec![0.0]);
        let p = GprProblem::new(&x, &y, &ladder).unwrap();
        let h = GprHyper {
            kernel: KernelSpec::rbf(vec![1.0], 1.0 - 1e-12).unwrap(),
            noise_variance: 1e-12,
            mean: 3.0,
        };
        assert!((p.nlml(&h).unwrap() - 0.918_939).abs() < 1e-6);
    }

    #[test]
    fn quadratic_term_scales_by_four() {
        let (x, y) = line(5);
        let ladder = JitterLadder::default();
        let h = GprHyper {
            kernel: KernelSpec::matern(Nu::ThreeHalves, vec![0.8], 1.2).unwrap(),
            noise_variance: 0.05,
            mean: 0.2,
        };
        let y2: Vec<f64> = y.iter().map(|v| 0.2 + 2.0 * (v - 0.2)).collect();
        let base = |y: &[f64]| {
            let p = GprProblem::new(&x, y, &ladder).unwrap();
            let s = p.solve(&h).unwrap();
            s.residual.iter().zip(&s.alpha).map(|(r, a)| r * a).sum::<f64>()
        };
        assert!((base(&y2) - 4.0 * base(&y)).abs() < 1e-9);
    }

    #[test]
    fn zero_epochs_keeps_initial_hyperparameters() {
        let (x, y) = line(8);
        let template = KernelSpec::matern(Nu::ThreeHalves, vec![1.0], 1.0).unwrap();
        let cfg = GprConfig { epochs: 0, ..GprConfig::default() };
        let m = fit_gpr(&x, &y, &template, &cfg).unwrap();
        assert_eq!(m.hyper(), &initial_hyper(&template, &y).unwrap());
        assert_eq!(m.alpha().len(), 8);
        assert!(m.history().is_empty());
    }

    #[test]
    fn training_lowers_nlml() {
        let (x, y) = line(20);
        let template = KernelSpec::rbf(vec![1.0], 1.0).unwrap();
        let m = fit_gpr(&x, &y, &template, &GprConfig::default()).unwrap();
        let h = m.history();
        assert_eq!(h.len(), 200);
        assert!(m.nlml() < h[0]);
    }

    #[test]
    fn predicts_with_dimension_check() {
        let (x, y) = line(6);
        let m = fit_gpr(&x, &y, &KernelSpec::rbf(vec![1.0], 1.0).unwrap(), &GprConfig::default()).unwrap();
        assert!(matches!(
            m.predict(&DMatrix::zeros(1, 2)),
            Err(GprError::DimensionMismatch { expected: 1, got: 2 })
        ));
        let (_, var) = m.predict(&x).unwrap();
        assert!(var.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn too_few_points() {
        let x = DMatrix::zeros(1, 1);
        let r = fit_gpr(&x, &[1.0], &KernelSpec::rbf(vec![1.0], 1.0).unwrap(), &GprConfig::default());
        assert!(matches!(r, Err(GprError::TooFewPoints { .. })));
    }

    #[test]
    fn back_transform_modes() {
        assert_eq!(back_transform(0.0, 0.0, 0.0, BackTransform::Median), 1.0);
        assert_eq!(back_transform(0.0, 0.0, 0.0, BackTransform::Mean), 1.0);
        assert!((back_transform(1.0, 2.0, 0.0, BackTransform::Median) - 2.718_28).abs() < 1e-5);
        assert!((back_transform(1.0, 2.0, 0.0, BackTransform::Mean) - 7.389_06).abs() < 1e-5);
        assert_eq!(back_transform(-30.0, 0.0, 1e-6, BackTransform::Median), 0.0);
    }

    #[test]
    fn file_round_trip_and_checksum() {
        let (x, y) = line(6);
        let m = fit_gpr(&x, &y, &KernelSpec::rbf(vec![1.0], 1.0).unwrap(), &GprConfig { epochs: 5, ..GprConfig::default() })
            .unwrap();
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = GprModel::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.hyper(), m.hyper());
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());

        let mut file = m.to_file();
        file.y_train[0] += 1.0;
        assert!(matches!(GprModel::from_file(file), Err(GprError::ChecksumMismatch { .. })));
    }
}
