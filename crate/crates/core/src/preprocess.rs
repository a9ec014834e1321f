//! Feature assembly, one-hot environments, standard scaling, target capping,
//! train/test splits and k-fold plans.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Composition, Dataset, Environments, N_ENVIRONMENTS};
use crate::elements::{Element, N_ELEMENTS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("no rows left after selecting `{0}` features")]
    EmptySubset(FeatureSet),
    #[error("unknown feature set `{0}`")]
    UnknownFeatureSet(String),
    #[error("unknown cap mode `{0}` (expected drop or clip)")]
    UnknownCapMode(String),
    #[error("cap threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("every sample exceeds the cap of {0} mpy")]
    AllDropped(f64),
    #[error("test fraction must lie in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("cannot plan {k} folds over {n} rows")]
    BadFolds { n: usize, k: usize },
    #[error("scaler needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("expected {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("log transform needs y + shift > 0, got y = {0}")]
    NonPositive(f64),
}

/// Which columns enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureSet {
    Comp,
    CompEnv,
    CompEnvTemp,
    CompEnvDur,
    CompEnvTempDur,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [
        FeatureSet::Comp,
        FeatureSet::CompEnv,
        FeatureSet::CompEnvTemp,
        FeatureSet::CompEnvDur,
        FeatureSet::CompEnvTempDur,
    ];

    pub fn has_env(self) -> bool {
        self != FeatureSet::Comp
    }

    pub fn has_temperature(self) -> bool {
        matches!(self, FeatureSet::CompEnvTemp | FeatureSet::CompEnvTempDur)
    }

    pub fn has_duration(self) -> bool {
        matches!(self, FeatureSet::CompEnvDur | FeatureSet::CompEnvTempDur)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Comp => "comp",
            FeatureSet::CompEnv => "comp+env",
            FeatureSet::CompEnvTemp => "comp+env+temp",
            FeatureSet::CompEnvDur => "comp+env+dur",
            FeatureSet::CompEnvTempDur => "comp+env+temp+dur",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| PreprocessError::UnknownFeatureSet(s.to_string()))
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = PreprocessError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Composition,
    EnvironmentIndicator,
    Temperature,
    Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column descriptors for a feature set, in matrix order.
pub fn columns_for(set: FeatureSet, environments: &Environments) -> Vec<ColumnInfo> {
    let mut cols: Vec<ColumnInfo> = Element::all()
        .map(|e| ColumnInfo {
            name: e.symbol().to_string(),
            kind: ColumnKind::Composition,
        })
        .collect();
    if set.has_env() {
        cols.extend(environments.labels().iter().map(|l| ColumnInfo {
            name: format!("env={l}"),
            kind: ColumnKind::EnvironmentIndicator,
        }));
    }
    if set.has_temperature() {
        cols.push(ColumnInfo {
            name: "temp_c".into(),
            kind: ColumnKind::Temperature,
        });
    }
    if set.has_duration() {
        cols.push(ColumnInfo {
            name: "duration_days".into(),
            kind: ColumnKind::Duration,
        });
    }
    cols
}

/// One feature row, or `None` when the set needs a field the record lacks.
pub fn feature_row(
    set: FeatureSet,
    composition: &Composition,
    environment: u8,
    temperature: Option<f64>,
    duration: Option<f64>,
) -> Option<Vec<f64>> {
    let mut row = Vec::with_capacity(N_ELEMENTS + N_ENVIRONMENTS + 2);
    row.extend_from_slice(composition.as_array());
    if set.has_env() {
        row.extend((0..N_ENVIRONMENTS).map(|i| if i == environment as usize { 1.0 } else { 0.0 }));
    }
    if set.has_temperature() {
        row.push(temperature?);
    }
    if set.has_duration() {
        row.push(duration?);
    }
    Some(row)
}

/// A dense design matrix (rows are samples) with column descriptors and the
/// ids of the samples behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub columns: Vec<ColumnInfo>,
    pub ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>], columns: Vec<ColumnInfo>, ids: Vec<String>) -> Self {
        let p = columns.len();
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        FeatureMatrix { values, columns, ids }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows at the given positions.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(rows),
            columns: self.columns.clone(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

/// Builds the design matrix and rate targets (mpy). Samples lacking a
/// selected temperature or duration are left out.
pub fn build_features(
    d: &Dataset,
    set: FeatureSet,
) -> Result<(FeatureMatrix, Vec<f64>), PreprocessError> {
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for s in d.samples() {
        if let Some(row) = feature_row(set, &s.composition, s.environment, s.temperature, s.duration) {
            rows.push(row);
            ids.push(s.id.clone());
            y.push(s.rate);
        }
    }
    if rows.is_empty() {
        return Err(PreprocessError::EmptySubset(set));
    }
    Ok((FeatureMatrix::from_rows(&rows, columns_for(set, d.environments()), ids), y))
}

/// Per-column standardization statistics (population variance).
///
/// Constant columns are flagged and passed through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalerState {
    pub fn fit(x: &DMatrix<f64>) -> Result<ScalerState, PreprocessError> {
        let n = x.nrows();
        if n < 2 {
            return Err(PreprocessError::TooFewRows(n));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            let is_const = std <= 1e-12 * mean.abs().max(1.0);
            means.push(mean);
            stds.push(std);
            constant.push(is_const);
        }
        Ok(ScalerState { means, stds, constant })
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<(), PreprocessError> {
        if x.ncols() != self.means.len() {
            return Err(PreprocessError::ColumnMismatch {
                expected: self.means.len(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PreprocessError> {
        self.check(x)?;
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if !self.constant[j] {
                col.apply(|v| *v = (*v - self.means[j]) / self.stds[j]);
            }
        }
        Ok(out)
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, PreprocessError> {
        self.check(z)?;
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if !self.constant[j] {
                col.apply(|v| *v = *v * self.stds[j] + self.means[j]);
            }
        }
        Ok(out)
    }
}

/// What to do with rates above the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CapMode {
    #[default]
    Drop,
    Clip,
}

impl FromStr for CapMode {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "drop" => Ok(CapMode::Drop),
            "clip" => Ok(CapMode::Clip),
            other => Err(PreprocessError::UnknownCapMode(other.to_string())),
        }
    }
}

/// Drops (or clips to the threshold) samples whose rate exceeds `threshold`.
/// A rate equal to the threshold is kept.
pub fn cap_target(d: &Dataset, threshold: f64, mode: CapMode) -> Result<Dataset, PreprocessError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(PreprocessError::BadThreshold(threshold));
    }
    let out = match mode {
        CapMode::Drop => d.filter(|s| s.rate <= threshold),
        CapMode::Clip => d.with_samples(
            d.samples()
                .iter()
                .cloned()
                .map(|mut s| {
                    s.rate = s.rate.min(threshold);
                    s
                })
                .collect(),
        ),
    };
    if out.is_empty() {
        return Err(PreprocessError::AllDropped(threshold));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Random split with `round(test_fraction · n)` test rows. Both index lists are
/// sorted ascending.
pub fn split_train_test(
    n: usize,
    seed: u64,
    test_fraction: f64,
) -> Result<SplitIndices, PreprocessError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(PreprocessError::BadFraction(test_fraction));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// Assignment of rows to `k` validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kfold_plan(n: usize, k: usize, seed: u64) -> Result<FoldPlan, PreprocessError> {
    if k < 2 || k > n {
        return Err(PreprocessError::BadFolds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (rank, &row) in order.iter().enumerate() {
        assignments[row] = rank % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Default shift added to rates before taking logs, in mpy.
pub const DEFAULT_LOG_SHIFT: f64 = 1e-6;

/// `z = ln(y + shift)`.
pub fn log_transform(y: &[f64], shift: f64) -> Result<Vec<f64>, PreprocessError> {
    y.iter()
        .map(|&v| {
            let s = v + shift;
            if s > 0.0 && s.is_finite() {
                Ok(s.ln())
            } else {
                Err(PreprocessError::NonPositive(v))
            }
        })
        .collect()
}

/// `y = exp(z) − shift`.
pub fn inv_log_transform(z: &[f64], shift: f64) -> Vec<f64> {
    z.iter().map(|v| v.exp() - shift).collect()
}

/// Everything needed to rebuild the exact preprocessing of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMetadata {
    pub feature_set: FeatureSet,
    pub columns: Vec<ColumnInfo>,
    pub environments: Environments,
    /// Always `population` (1/n); recorded so other implementations can match.
    pub scaler_variance: String,
    pub scaler: Option<ScalerState>,
    pub cap_mode: CapMode,
    pub cap_threshold: f64,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub log_shift: Option<f64>,
}
