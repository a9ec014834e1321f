//! Regression metrics, cross-validated grid search and the forward-model
//! comparison harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::forward::{fit_forward, ForwardConfig, ForwardError, ForwardKind, TrainedForward};
use crate::preprocess::{build_features, cap_target, split_train_test, CapMode, FeatureSet, FoldPlan, PreprocessError};
use crate::trees::{fit_forest, ForestConfig, MaxFeatures, RandomForest, TreeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{truth} targets but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no samples to score")]
    Empty,
    #[error("non-finite target or prediction")]
    NonFinite,
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("fold plan covers {plan} rows, data has {rows}")]
    FoldMismatch { plan: usize, rows: usize },
    #[error("bad parameter {name}={value:?}: {reason}")]
    BadParam { name: String, value: String, reason: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the targets are constant and R² is undefined.
    pub r2: Option<f64>,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics, EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch { truth: y.len(), pred: y_hat.len() });
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let (mut abs, mut ss_res, mut ss_tot) = (0.0, 0.0, 0.0);
    for (t, p) in y.iter().zip(y_hat) {
        let e = t - p;
        abs += e.abs();
        ss_res += e * e;
        ss_tot += (t - mean) * (t - mean);
    }
    let mse = ss_res / n;
    Ok(Metrics {
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        mae: abs / n,
        mse,
        rmse: mse.sqrt(),
    })
}

/// One grid point: parameter name → value token.
pub type ParamPoint = BTreeMap<String, String>;

/// Parameter name → candidate value tokens; the grid is their product.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamGrid(pub BTreeMap<String, Vec<String>>);

impl ParamGrid {
    pub fn points(&self) -> Vec<ParamPoint> {
        let mut out = vec![ParamPoint::new()];
        for (name, values) in &self.0 {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        if self.0.values().any(Vec::is_empty) {
            out.clear();
        }
        out
    }
}

/// Stable text key for a point, e.g. `max_depth=8;n_estimators=100`.
pub fn point_key(p: &ParamPoint) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// A model constructor searchable by [`grid_search`].
pub trait ModelFamily: Sync {
    type Model: Send;

    fn fit(&self, point: &ParamPoint, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Self::Model, EvalError>;

    fn predict(&self, model: &Self::Model, x: &DMatrix<f64>) -> Result<Vec<f64>, EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub point: ParamPoint,
    pub folds: Vec<Metrics>,
    /// Mean over folds whose R² is defined.
    pub mean_r2: Option<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug)]
pub struct CvResult<M> {
    /// Keyed by [`point_key`].
    pub entries: BTreeMap<String, CvEntry>,
    pub best: ParamPoint,
    /// The best configuration refitted on all rows.
    pub model: M,
}

impl<M> CvResult<M> {
    /// Entries from best to worst.
    pub fn ranking(&self) -> Vec<&CvEntry> {
        let mut v: Vec<&CvEntry> = self.entries.values().collect();
        v.sort_by(|a, b| compare_entries(a, b));
        v
    }
}

// higher mean R² first (undefined last), then lower RMSE, then key
fn compare_entries(a: &CvEntry, b: &CvEntry) -> std::cmp::Ordering {
    let r = |e: &CvEntry| e.mean_r2.unwrap_or(f64::NEG_INFINITY);
    r(b).total_cmp(&r(a))
        .then(a.mean_rmse.total_cmp(&b.mean_rmse))
        .then_with(|| point_key(&a.point).cmp(&point_key(&b.point)))
}

/// Exhaustive k-fold evaluation of every point, then a refit of the winner.
/// Fold `f` of every point is fitted with seed `seed + f`, so the result is
/// independent of enumeration order and of thread scheduling.
pub fn grid_search<F: ModelFamily>(
    family: &F,
    points: &[ParamPoint],
    x: &DMatrix<f64>,
    y: &[f64],
    plan: &FoldPlan,
    seed: u64,
) -> Result<CvResult<F::Model>, EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if plan.assignments.len() != y.len() || x.nrows() != y.len() {
        return Err(EvalError::FoldMismatch { plan: plan.assignments.len(), rows: y.len() });
    }
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.k).map(|f| (plan.training(f), plan.validation(f))).collect();
    let evaluated: Vec<CvEntry> = points
        .par_iter()
        .map(|p| {
            let metrics = folds
                .iter()
                .enumerate()
                .map(|(f, (tr, va))| {
                    let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                    let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
                    let m = family.fit(p, &x.select_rows(tr), &ytr, seed.wrapping_add(f as u64))?;
                    compute_metrics(&yva, &family.predict(&m, &x.select_rows(va))?)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            let r2s: Vec<f64> = metrics.iter().filter_map(|m| m.r2).collect();
            Ok(CvEntry {
                point: p.clone(),
                mean_r2: (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64),
                mean_rmse: metrics.iter().map(|m| m.rmse).sum::<f64>() / metrics.len() as f64,
                folds: metrics,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let entries: BTreeMap<String, CvEntry> = evaluated.into_iter().map(|e| (point_key(&e.point), e)).collect();
    let best = entries.values().min_by(|a, b| compare_entries(a, b)).unwrap().point.clone();
    let model = family.fit(&best, x, y, seed)?;
    Ok(CvResult { entries, best, model })
}

/// Random forests over `n_estimators`, `max_depth` (`none` = unlimited) and
/// `max_features`; unspecified parameters come from `base`.
#[derive(Debug, Clone, Default)]
pub struct ForestFamily {
    pub base: ForestConfig,
}

impl ForestFamily {
    pub fn config_for(&self, p: &ParamPoint) -> Result<ForestConfig, EvalError> {
        let mut cfg = self.base.clone();
        for (name, value) in p {
            let bad = |reason: &str| EvalError::BadParam { name: name.clone(), value: value.clone(), reason: reason.into() };
            match name.as_str() {
                "n_estimators" => cfg.n_estimators = value.parse().map_err(|_| bad("not an integer"))?,
                "max_depth" => {
                    cfg.max_depth = match value.as_str() {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| bad("not an integer or none"))?),
                    }
                }
                "max_features" => cfg.max_features = value.parse::<MaxFeatures>().map_err(|e| bad(&e.to_string()))?,
                "min_samples_leaf" => cfg.min_samples_leaf = value.parse().map_err(|_| bad("not an integer"))?,
                _ => return Err(bad("unknown forest parameter")),
            }
        }
        Ok(cfg)
    }

    pub fn default_grid() -> ParamGrid {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        ParamGrid(BTreeMap::from([
            ("n_estimators".to_string(), s(&["100", "200", "400"])),
            ("max_depth".to_string(), s(&["4", "8", "16", "none"])),
            ("max_features".to_string(), s(&["all", "sqrt", "1/3"])),
        ]))
    }
}

impl ModelFamily for ForestFamily {
    type Model = RandomForest;

    fn fit(&self, p: &ParamPoint, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<RandomForest, EvalError> {
        let cfg = ForestConfig { seed, ..self.config_for(p)? };
        Ok(fit_forest(x, y, &cfg)?)
    }

    fn predict(&self, m: &RandomForest, x: &DMatrix<f64>) -> Result<Vec<f64>, EvalError> {
        Ok(m.predict(x)?)
    }
}

/// Data-handling protocol shared by every cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub cap_threshold: f64,
    pub cap_mode: CapMode,
    pub test_fraction: f64,
    pub seed: u64,
    /// Grid-search the forest with 5-fold CV on the training split.
    pub rf_grid_search: bool,
    pub rf_grid: ParamGrid,
    pub cv_folds: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            cap_threshold: 100.0,
            cap_mode: CapMode::Drop,
            test_fraction: 0.2,
            seed: 0,
            rf_grid_search: false,
            rf_grid: ForestFamily::default_grid(),
            cv_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub sample_id: String,
    pub truth: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ForwardKind,
    pub feature_set: FeatureSet,
    pub metrics: Metrics,
    pub pairs: Vec<Pair>,
    /// Winning grid point when the forest was grid-searched.
    pub selected: Option<ParamPoint>,
}

impl Cell {
    /// `pairs_<model>_<feature set>.csv`, with `+` spelled `_`.
    pub fn pairs_file_name(&self) -> String {
        format!("pairs_{}_{}.csv", self.model, self.feature_set.name().replace('+', "_"))
    }

    pub fn pairs_csv(&self) -> String {
        pairs_csv(&self.pairs)
    }
}

pub fn pairs_csv(pairs: &[Pair]) -> String {
    let mut s = String::from("sample_id,true,predicted\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{}", csv_field(&p.sample_id), p.truth, p.predicted);
    }
    s
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<Cell>,
}

impl ComparisonReport {
    /// `model,feature_set,r2,mae,rmse`; an undefined R² is left empty.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("model,feature_set,r2,mae,rmse\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{},{}", c.model, c.feature_set.name(), opt(c.metrics.r2), c.metrics.mae, c.metrics.rmse);
        }
        s
    }
}

/// Fits and scores one model on one feature set: cap, build features,
/// split, fit on the training rows, score the test rows.
pub fn evaluate_cell(
    dataset: &Dataset,
    kind: ForwardKind,
    set: FeatureSet,
    cfg: &ForwardConfig,
    protocol: &Protocol,
) -> Result<Cell, EvalError> {
    train_cell(dataset, kind, set, cfg, protocol).map(|(cell, _)| cell)
}

/// [`evaluate_cell`], also returning the fitted model.
pub fn train_cell(
    dataset: &Dataset,
    kind: ForwardKind,
    set: FeatureSet,
    cfg: &ForwardConfig,
    protocol: &Protocol,
) -> Result<(Cell, TrainedForward), EvalError> {
    let capped = cap_target(dataset, protocol.cap_threshold, protocol.cap_mode)?;
    let (fm, y) = build_features(&capped, set)?;
    let split = split_train_test(fm.nrows(), protocol.seed, protocol.test_fraction)?;
    let train = fm.select_rows(&split.train);
    let test = fm.select_rows(&split.test);
    let ytr: Vec<f64> = split.train.iter().map(|&i| y[i]).collect();
    let yte: Vec<f64> = split.test.iter().map(|&i| y[i]).collect();
    let columns: Vec<String> = fm.columns.iter().map(|c| c.name.clone()).collect();

    let mut cfg = cfg.clone();
    let mut selected = None;
    if kind == ForwardKind::Rf && protocol.rf_grid_search {
        let plan = crate::preprocess::kfold_plan(ytr.len(), protocol.cv_folds, protocol.seed)?;
        let family = ForestFamily { base: cfg.rf.clone() };
        let cv = grid_search(&family, &protocol.rf_grid.points(), &train.values, &ytr, &plan, protocol.seed)?;
        cfg.rf = family.config_for(&cv.best)?;
        selected = Some(cv.best);
    }
    let model = fit_forward(kind, set, columns, &train.values, &ytr, &cfg, protocol.seed)?;
    let pred = model.predict(&test.values)?;
    let metrics = compute_metrics(&yte, &pred)?;
    let pairs = test
        .ids
        .iter()
        .zip(yte.iter().zip(&pred))
        .map(|(id, (&t, &p))| Pair { sample_id: id.clone(), truth: t, predicted: p })
        .collect();
    Ok((Cell { model: kind, feature_set: set, metrics, pairs, selected }, model))
}

/// Every `(model, feature set)` cell, models outermost.
pub fn compare_forward_models(
    dataset: &Dataset,
    sets: &[FeatureSet],
    kinds: &[ForwardKind],
    cfg: &ForwardConfig,
    protocol: &Protocol,
) -> Result<ComparisonReport, EvalError> {
    let mut cells = Vec::with_capacity(sets.len() * kinds.len());
    for &kind in kinds {
        for &set in sets {
            log::info!("evaluating {kind} on {}", set.name());
            cells.push(evaluate_cell(dataset, kind, set, cfg, protocol)?);
        }
    }
    Ok(ComparisonReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = compute_metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m, Metrics { r2: Some(0.0), mae: 1.0, mse: 1.0, rmse: 1.0 });
    }

    #[test]
    fn perfect_and_mean_predictors() {
        let y = [1.0, 4.0, 2.0, 8.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!(m, Metrics { r2: Some(1.0), mae: 0.0, mse: 0.0, rmse: 0.0 });
        let mean = [3.75; 4];
        assert_eq!(compute_metrics(&y, &mean).unwrap().r2, Some(0.0));
    }

    #[test]
    fn constant_truth_flags_r2() {
        let m = compute_metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(m.r2, None);
        assert_eq!(m.mae, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[1.0], &[]), Err(EvalError::LengthMismatch { .. })));
        assert_eq!(compute_metrics(&[], &[]), Err(EvalError::Empty));
        assert_eq!(compute_metrics(&[f64::NAN], &[0.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn grid_points_are_the_product() {
        let g = ForestFamily::default_grid();
        let pts = g.points();
        assert_eq!(pts.len(), 36);
        assert_eq!(point_key(&pts[0]), "max_depth=4;max_features=all;n_estimators=100");
        assert!(ParamGrid(BTreeMap::from([("a".into(), vec![])])).points().is_empty());
    }

    #[test]
    fn forest_family_parses_points() {
        let f = ForestFamily::default();
        let p = ParamPoint::from([("max_depth".into(), "none".into()), ("max_features".into(), "sqrt".into())]);
        let c = f.config_for(&p).unwrap();
        assert_eq!((c.max_depth, c.max_features), (None, MaxFeatures::Sqrt));
        let bad = ParamPoint::from([("depth".into(), "3".into())]);
        assert!(f.config_for(&bad).is_err());
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
