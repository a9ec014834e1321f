use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_forest, fit_gbm, ForestConfig, GbmConfig, GradientBoostedTrees, RandomForest, TreeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TreeModelConfig {
    Forest(ForestConfig),
    Gbm(GbmConfig),
}

impl TreeModelConfig {
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<TreeModel, TreeError> {
        match self {
            TreeModelConfig::Forest(c) => fit_forest(x, y, c).map(TreeModel::Forest),
            TreeModelConfig::Gbm(c) => fit_gbm(x, y, c).map(TreeModel::Gbm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TreeModel {
    Forest(RandomForest),
    Gbm(GradientBoostedTrees),
}

impl TreeModel {
    pub fn n_features(&self) -> usize {
        match self {
            TreeModel::Forest(m) => m.n_features(),
            TreeModel::Gbm(m) => m.n_features(),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TreeError> {
        match self {
            TreeModel::Forest(m) => m.predict(x),
            TreeModel::Gbm(m) => m.predict(x),
        }
    }
}

/// One independently fitted copy of the base regressor per target column.
/// Every target uses the same configuration (and seed), so a duplicated
/// column yields an identical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MultiFile")]
pub struct MultiOutputModel {
    targets: Vec<String>,
    models: Vec<TreeModel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiFile {
    targets: Vec<String>,
    models: Vec<TreeModel>,
}

impl TryFrom<MultiFile> for MultiOutputModel {
    type Error = TreeError;

    fn try_from(f: MultiFile) -> Result<Self, TreeError> {
        if f.targets.is_empty() || f.targets.len() != f.models.len() {
            return Err(TreeError::Malformed("one model per target required".into()));
        }
        let d = f.models[0].n_features();
        if f.models.iter().any(|m| m.n_features() != d) {
            return Err(TreeError::Malformed("target models disagree on feature count".into()));
        }
        Ok(MultiOutputModel { targets: f.targets, models: f.models })
    }
}

/// Fits one model per column of `y` (`n × t`).
pub fn fit_multi_output(
    cfg: &TreeModelConfig,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    targets: Vec<String>,
) -> Result<MultiOutputModel, TreeError> {
    if targets.len() != y.ncols() || targets.is_empty() {
        return Err(TreeError::BadConfig(format!("{} target names for {} target columns", targets.len(), y.ncols())));
    }
    let models = y
        .column_iter()
        .map(|c| {
            let col: Vec<f64> = c.iter().copied().collect();
            cfg.fit(x, &col)
        })
        .collect::<Result<_, _>>()?;
    Ok(MultiOutputModel { targets, models })
}

impl MultiOutputModel {
    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn models(&self) -> &[TreeModel] {
        &self.models
    }

    pub fn n_features(&self) -> usize {
        self.models[0].n_features()
    }

    /// `n* × t` prediction matrix.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, TreeError> {
        let cols = self.models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_fn(x.nrows(), cols.len(), |i, j| cols[j][i]))
    }
}
