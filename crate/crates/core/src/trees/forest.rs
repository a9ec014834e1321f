use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training, check_width, grow, rows, DecisionTree, FeatureSampler, MaxFeatures, TreeError, TreeLimits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    #[serde(with = "super::depth")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn limits(&self) -> TreeLimits {
        TreeLimits { max_depth: self.max_depth, min_samples_leaf: self.min_samples_leaf }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.n_estimators == 0 {
            return Err(TreeError::BadConfig("n_estimators must be ≥ 1".into()));
        }
        self.limits().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForestFile")]
pub struct RandomForest {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<DecisionTree>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ForestFile {
    config: ForestConfig,
    n_features: usize,
    trees: Vec<DecisionTree>,
}

impl TryFrom<ForestFile> for RandomForest {
    type Error = TreeError;

    fn try_from(f: ForestFile) -> Result<Self, TreeError> {
        f.config.validate()?;
        if f.trees.len() != f.config.n_estimators {
            return Err(TreeError::Malformed(format!(
                "{} trees but n_estimators = {}",
                f.trees.len(),
                f.config.n_estimators
            )));
        }
        if f.trees.iter().any(|t| t.n_features() != f.n_features) {
            return Err(TreeError::Malformed("trees disagree on feature count".into()));
        }
        Ok(RandomForest { config: f.config, n_features: f.n_features, trees: f.trees })
    }
}

/// One independent seed per tree, drawn from a ChaCha8 stream keyed by `seed`.
pub fn tree_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// `n` row indices drawn uniformly with replacement.
pub fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bagged trees with per-split feature subsampling. Trees are grown in
/// parallel; each owns an RNG seeded from [`tree_seeds`], so the result does
/// not depend on scheduling.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig) -> Result<RandomForest, TreeError> {
    check_training(x, y)?;
    cfg.validate()?;
    let n = y.len();
    let limits = cfg.limits();
    let k = cfg.max_features.resolve(x.ncols());
    let trees = tree_seeds(cfg.seed, cfg.n_estimators)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let idx = if cfg.bootstrap { bootstrap_indices(n, &mut rng) } else { (0..n).collect() };
            grow(x, y, idx, &limits, Some(FeatureSampler { k, rng: &mut rng }))
        })
        .collect();
    Ok(RandomForest { config: cfg.clone(), n_features: x.ncols(), trees })
}

impl RandomForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        sum / self.trees.len() as f64
    }

    /// Unweighted mean of the trees, summed in tree order.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TreeError> {
        check_width(x, self.n_features)?;
        Ok(rows(x).map(|r| self.predict_row(&r)).collect())
    }

    /// Mean decrease in squared error per feature: each tree's gains are
    /// normalized to sum to 1, averaged over trees, and renormalized. All
    /// zeros when no tree split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            let g = t.gains();
            let total: f64 = g.iter().sum();
            if total > 0.0 {
                for (a, b) in imp.iter_mut().zip(&g) {
                    *a += b / total;
                }
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::fit_tree;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * (j + 3) * 7919) % 101) as f64 / 10.0);
        let y = (0..40).map(|i| x[(i, 0)] * 2.0 - x[(i, 2)]).collect();
        (x, y)
    }

    #[test]
    fn degenerate_forest_is_a_tree() {
        let (x, y) = data();
        let cfg = ForestConfig { n_estimators: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        let t = fit_tree(&x, &y, &TreeLimits::default()).unwrap();
        assert_eq!(f.trees()[0], t);
        assert_eq!(f.predict(&x).unwrap(), t.predict(&x).unwrap());
    }

    #[test]
    fn seeded_determinism() {
        let (x, y) = data();
        let cfg = ForestConfig { n_estimators: 10, max_features: MaxFeatures::Sqrt, seed: 5, ..Default::default() };
        assert_eq!(fit_forest(&x, &y, &cfg).unwrap(), fit_forest(&x, &y, &cfg).unwrap());
        let other = ForestConfig { seed: 6, ..cfg.clone() };
        assert_ne!(fit_forest(&x, &y, &cfg).unwrap(), fit_forest(&x, &y, &other).unwrap());
    }

    #[test]
    fn round_trip_and_count_check() {
        let (x, y) = data();
        let f = fit_forest(&x, &y, &ForestConfig { n_estimators: 3, ..Default::default() }).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<RandomForest>(&s).unwrap(), f);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["config"]["n_estimators"] = 4.into();
        assert!(serde_json::from_value::<RandomForest>(v).is_err());
    }

    #[test]
    fn importance_normalized_and_ranked() {
        let (x, y) = data();
        let imp = fit_forest(&x, &y, &ForestConfig { n_estimators: 5, ..Default::default() })
            .unwrap()
            .feature_importance();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[0] > imp[2]);
    }
}
