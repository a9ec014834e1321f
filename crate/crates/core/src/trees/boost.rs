use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, check_width, grow, rows, DecisionTree, FeatureSampler, MaxFeatures, TreeError, TreeLimits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbmConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    #[serde(with = "super::depth")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: Some(3),
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }
}

impl GbmConfig {
    pub fn limits(&self) -> TreeLimits {
        TreeLimits { max_depth: self.max_depth, min_samples_leaf: self.min_samples_leaf }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TreeError::BadConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        self.limits().validate()
    }
}

/// `F(x) = F₀ + η Σ_m tree_m(x)` with `F₀ = mean(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GbmFile")]
pub struct GradientBoostedTrees {
    config: GbmConfig,
    n_features: usize,
    init: f64,
    stages: Vec<DecisionTree>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GbmFile {
    config: GbmConfig,
    n_features: usize,
    init: f64,
    stages: Vec<DecisionTree>,
}

impl TryFrom<GbmFile> for GradientBoostedTrees {
    type Error = TreeError;

    fn try_from(f: GbmFile) -> Result<Self, TreeError> {
        f.config.validate()?;
        if !f.init.is_finite() {
            return Err(TreeError::Malformed("non-finite initial value".into()));
        }
        if f.stages.len() > f.config.n_rounds || f.stages.iter().any(|t| t.n_features() != f.n_features) {
            return Err(TreeError::Malformed("stages inconsistent with config".into()));
        }
        Ok(GradientBoostedTrees { config: f.config, n_features: f.n_features, init: f.init, stages: f.stages })
    }
}

/// Least-squares boosting: each stage fits the current residuals.
/// Stops early once the residuals are exactly zero.
pub fn fit_gbm(x: &DMatrix<f64>, y: &[f64], cfg: &GbmConfig) -> Result<GradientBoostedTrees, TreeError> {
    check_training(x, y)?;
    cfg.validate()?;
    let n = y.len();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.max_features.resolve(x.ncols());
    let limits = cfg.limits();
    let mut stages = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        if residual.iter().all(|&r| r == 0.0) {
            break;
        }
        let tree = grow(x, &residual, (0..n).collect(), &limits, Some(FeatureSampler { k, rng: &mut rng }));
        for (f, r) in fitted.iter_mut().zip(rows(x)) {
            *f += cfg.learning_rate * tree.predict_row(&r);
        }
        stages.push(tree);
    }
    Ok(GradientBoostedTrees { config: cfg.clone(), n_features: x.ncols(), init, stages })
}

impl GradientBoostedTrees {
    pub fn init(&self) -> f64 {
        self.init
    }

    pub fn stages(&self) -> &[DecisionTree] {
        &self.stages
    }

    pub fn config(&self) -> &GbmConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let eta = self.config.learning_rate;
        self.stages.iter().fold(self.init, |f, t| f + eta * t.predict_row(x))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TreeError> {
        check_width(x, self.n_features)?;
        Ok(rows(x).map(|r| self.predict_row(&r)).collect())
    }
}
