//! Inverse ensemble: corrosion rate and context → trace-element atomic
//! percentages.
//!
//! Three submodels cover nested feature-availability subsets (base,
//! base + duration, base + duration + temperature). Each is a forest and a
//! gradient-boosted model, both multi-output, blended with weights derived
//! from their validation R². A query is answered by every submodel whose
//! features it has, and those answers are averaged ("union" model).

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Composition, CorrosionSample, Dataset, QueryRecord};
use crate::elements::Element;
use crate::evaluation::{compute_metrics, csv_field, EvalError, Metrics};
use crate::preprocess::{split_train_test, PreprocessError};
use crate::trees::{fit_multi_output, ForestConfig, GbmConfig, MultiOutputModel, TreeError, TreeModelConfig};

pub const DEFAULT_TARGETS: [Element; 6] = [Element::ZN, Element::TI, Element::NI, Element::CU, Element::FE, Element::MN];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InverseError {
    #[error("{set} subset has {rows} rows, need at least {min}")]
    SubsetTooSmall { set: InverseFeatureSet, rows: usize, min: usize },
    #[error("every target is constant on the {0} subset")]
    DegenerateTargets(InverseFeatureSet),
    #[error("query {0:?} has no corrosion rate")]
    MissingRate(String),
    #[error("no targets configured")]
    NoTargets,
    #[error("malformed ensemble: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InverseFeatureSet {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "base+duration")]
    BaseDuration,
    #[serde(rename = "base+duration+temperature")]
    BaseDurationTemperature,
}

impl InverseFeatureSet {
    pub const ALL: [InverseFeatureSet; 3] =
        [InverseFeatureSet::Base, InverseFeatureSet::BaseDuration, InverseFeatureSet::BaseDurationTemperature];

    pub fn name(self) -> &'static str {
        match self {
            InverseFeatureSet::Base => "base",
            InverseFeatureSet::BaseDuration => "base+duration",
            InverseFeatureSet::BaseDurationTemperature => "base+duration+temperature",
        }
    }

    pub fn columns(self) -> Vec<&'static str> {
        let mut c = vec!["rate_mpy", "env_id", "Al", "Si", "Mg"];
        if self != InverseFeatureSet::Base {
            c.push("duration_days");
        }
        if self == InverseFeatureSet::BaseDurationTemperature {
            c.push("temp_c");
        }
        c
    }

    /// The feature row, or `None` when the query lacks a required field.
    pub fn row(self, q: &InverseQuery) -> Option<Vec<f64>> {
        let c = &q.composition;
        let mut r = vec![q.rate?, q.environment as f64, c.get(Element::AL), c.get(Element::SI), c.get(Element::MG)];
        if self != InverseFeatureSet::Base {
            r.push(q.duration?);
        }
        if self == InverseFeatureSet::BaseDurationTemperature {
            r.push(q.temperature?);
        }
        Some(r)
    }
}

impl fmt::Display for InverseFeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the ensemble needs from a row. Only Al, Si and Mg of the
/// composition are read.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseQuery {
    pub id: String,
    pub rate: Option<f64>,
    pub environment: u8,
    pub composition: Composition,
    pub temperature: Option<f64>,
    pub duration: Option<f64>,
}

impl From<&CorrosionSample> for InverseQuery {
    fn from(s: &CorrosionSample) -> Self {
        InverseQuery {
            id: s.id.clone(),
            rate: Some(s.rate),
            environment: s.environment,
            composition: s.composition.clone(),
            temperature: s.temperature,
            duration: s.duration,
        }
    }
}

impl From<&QueryRecord> for InverseQuery {
    fn from(q: &QueryRecord) -> Self {
        InverseQuery {
            id: q.id.clone(),
            rate: q.rate,
            environment: q.environment,
            composition: q.composition.clone(),
            temperature: q.temperature,
            duration: q.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseConfig {
    pub forest: ForestConfig,
    pub gbm: GbmConfig,
    pub targets: Vec<Element>,
    /// Held out inside each subset to score the forest and the GBM.
    pub validation_fraction: f64,
    pub min_rows: usize,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            forest: ForestConfig::default(),
            gbm: GbmConfig::default(),
            targets: DEFAULT_TARGETS.to_vec(),
            validation_fraction: 0.2,
            min_rows: 10,
        }
    }
}

/// `wᵢ = max(R²ᵢ, 0)` normalized; `(0.5, 0.5)` when both clamp to zero or
/// are undefined.
pub fn pair_weights(forest_r2: Option<f64>, gbm_r2: Option<f64>) -> [f64; 2] {
    let f = forest_r2.unwrap_or(0.0).max(0.0);
    let g = gbm_r2.unwrap_or(0.0).max(0.0);
    if f + g > 0.0 {
        [f / (f + g), g / (f + g)]
    } else {
        [0.5, 0.5]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submodel {
    pub set: InverseFeatureSet,
    pub forest: MultiOutputModel,
    pub gbm: MultiOutputModel,
    /// `[forest, gbm]`.
    pub weights: [f64; 2],
    /// Validation R² (mean over targets) behind the weights, `[forest, gbm]`.
    pub validation_r2: [Option<f64>; 2],
    /// Ids of the rows the final models were fitted on.
    pub sample_ids: Vec<String>,
}

/// Raw and blended outputs of one submodel for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelOutput {
    pub set: InverseFeatureSet,
    pub forest: Vec<f64>,
    pub gbm: Vec<f64>,
    /// `w_f·forest + w_g·gbm`, before clamping.
    pub blended: Vec<f64>,
}

impl Submodel {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<SubmodelOutput>, InverseError> {
        let f = self.forest.predict(x)?;
        let g = self.gbm.predict(x)?;
        let [wf, wg] = self.weights;
        Ok((0..x.nrows())
            .map(|i| {
                let forest: Vec<f64> = f.row(i).iter().copied().collect();
                let gbm: Vec<f64> = g.row(i).iter().copied().collect();
                let blended = forest.iter().zip(&gbm).map(|(a, b)| wf * a + wg * b).collect();
                SubmodelOutput { set: self.set, forest, gbm, blended }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleFile")]
pub struct InverseEnsemble {
    targets: Vec<Element>,
    submodels: Vec<Submodel>,
    /// Feature sets whose subset was too small to train on.
    absent: Vec<InverseFeatureSet>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleFile {
    targets: Vec<Element>,
    submodels: Vec<Submodel>,
    absent: Vec<InverseFeatureSet>,
}

impl TryFrom<EnsembleFile> for InverseEnsemble {
    type Error = InverseError;

    fn try_from(f: EnsembleFile) -> Result<Self, InverseError> {
        let bad = |m: &str| Err(InverseError::Malformed(m.into()));
        if f.targets.is_empty() {
            return bad("no targets");
        }
        let names: Vec<String> = f.targets.iter().map(|e| e.symbol().to_string()).collect();
        let mut seen: Vec<InverseFeatureSet> = f.absent.clone();
        for s in &f.submodels {
            if seen.contains(&s.set) {
                return bad("feature set listed twice");
            }
            seen.push(s.set);
            let w = s.weights;
            if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (w[0] + w[1] - 1.0).abs() > 1e-9 {
                return bad("pair weights must be non-negative and sum to 1");
            }
            let d = s.set.columns().len();
            if s.forest.targets() != names.as_slice() || s.gbm.targets() != names.as_slice() {
                return bad("submodel targets differ from ensemble targets");
            }
            if s.forest.n_features() != d || s.gbm.n_features() != d {
                return bad("submodel feature count differs from its feature set");
            }
        }
        if seen.len() != 3 || !f.submodels.iter().any(|s| s.set == InverseFeatureSet::Base) {
            return bad("need a base submodel and every feature set accounted for");
        }
        Ok(InverseEnsemble { targets: f.targets, submodels: f.submodels, absent: f.absent })
    }
}

fn target_matrix(samples: &[&CorrosionSample], targets: &[Element]) -> DMatrix<f64> {
    DMatrix::from_fn(samples.len(), targets.len(), |i, j| samples[i].composition.get(targets[j]))
}

fn mean_r2(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Result<Option<f64>, InverseError> {
    let mut r2s = Vec::new();
    for j in 0..truth.ncols() {
        let t: Vec<f64> = truth.column(j).iter().copied().collect();
        let p: Vec<f64> = pred.column(j).iter().copied().collect();
        if let Some(r) = compute_metrics(&t, &p)?.r2 {
            r2s.push(r);
        }
    }
    Ok((!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64))
}

fn fit_submodel(
    set: InverseFeatureSet,
    rows: &[&CorrosionSample],
    cfg: &InverseConfig,
    seed: u64,
) -> Result<Submodel, InverseError> {
    let names: Vec<String> = cfg.targets.iter().map(|e| e.symbol().to_string()).collect();
    let x_rows: Vec<Vec<f64>> = rows.iter().map(|s| set.row(&InverseQuery::from(*s)).unwrap()).collect();
    let x = DMatrix::from_fn(rows.len(), set.columns().len(), |i, j| x_rows[i][j]);
    let y = target_matrix(rows, &cfg.targets);
    if y.column_iter().all(|c| c.iter().all(|&v| v == c[0])) {
        return Err(InverseError::DegenerateTargets(set));
    }
    let forest_cfg = TreeModelConfig::Forest(ForestConfig { seed, ..cfg.forest.clone() });
    let gbm_cfg = TreeModelConfig::Gbm(GbmConfig { seed, ..cfg.gbm.clone() });

    let split = split_train_test(rows.len(), seed, cfg.validation_fraction)?;
    let validation_r2 = if split.test.is_empty() || split.train.is_empty() {
        [None, None]
    } else {
        let (xt, yt) = (x.select_rows(&split.train), y.select_rows(&split.train));
        let (xv, yv) = (x.select_rows(&split.test), y.select_rows(&split.test));
        let f = fit_multi_output(&forest_cfg, &xt, &yt, names.clone())?;
        let g = fit_multi_output(&gbm_cfg, &xt, &yt, names.clone())?;
        [mean_r2(&yv, &f.predict(&xv)?)?, mean_r2(&yv, &g.predict(&xv)?)?]
    };
    let weights = pair_weights(validation_r2[0], validation_r2[1]);
    log::info!("{set}: {} rows, validation R² {validation_r2:?}, weights {weights:?}", rows.len());
    Ok(Submodel {
        set,
        forest: fit_multi_output(&forest_cfg, &x, &y, names.clone())?,
        gbm: fit_multi_output(&gbm_cfg, &x, &y, names)?,
        weights,
        validation_r2,
        sample_ids: rows.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Trains the submodels whose subsets have at least `cfg.min_rows` rows.
/// The base submodel is mandatory.
pub fn fit_inverse(dataset: &Dataset, seed: u64, cfg: &InverseConfig) -> Result<InverseEnsemble, InverseError> {
    if cfg.targets.is_empty() {
        return Err(InverseError::NoTargets);
    }
    let mut submodels = Vec::new();
    let mut absent = Vec::new();
    for set in InverseFeatureSet::ALL {
        let rows: Vec<&CorrosionSample> =
            dataset.samples().iter().filter(|s| set.row(&InverseQuery::from(*s)).is_some()).collect();
        if rows.len() < cfg.min_rows {
            if set == InverseFeatureSet::Base {
                return Err(InverseError::SubsetTooSmall { set, rows: rows.len(), min: cfg.min_rows });
            }
            log::warn!("{set} subset has only {} rows; submodel skipped", rows.len());
            absent.push(set);
            continue;
        }
        submodels.push(fit_submodel(set, &rows, cfg, seed)?);
    }
    Ok(InverseEnsemble { targets: cfg.targets.clone(), submodels, absent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversePrediction {
    pub id: String,
    /// Union prediction per target, clamped to `[0, 100]`.
    pub values: Vec<f64>,
    /// Contributing submodels in feature-set order.
    pub contributing: Vec<InverseFeatureSet>,
    pub outputs: Vec<SubmodelOutput>,
}

impl InverseEnsemble {
    pub fn targets(&self) -> &[Element] {
        &self.targets
    }

    pub fn submodels(&self) -> &[Submodel] {
        &self.submodels
    }

    pub fn absent(&self) -> &[InverseFeatureSet] {
        &self.absent
    }

    pub fn submodel(&self, set: InverseFeatureSet) -> Option<&Submodel> {
        self.submodels.iter().find(|s| s.set == set)
    }

    /// A copy without the submodel for `set` (never the base one).
    pub fn without(&self, set: InverseFeatureSet) -> InverseEnsemble {
        let mut e = self.clone();
        if set != InverseFeatureSet::Base && e.submodels.iter().any(|s| s.set == set) {
            e.submodels.retain(|s| s.set != set);
            e.absent.push(set);
            e.absent.sort();
        }
        e
    }

    pub fn predict(&self, queries: &[InverseQuery]) -> Result<Vec<InversePrediction>, InverseError> {
        if let Some(q) = queries.iter().find(|q| q.rate.is_none()) {
            return Err(InverseError::MissingRate(q.id.clone()));
        }
        let mut outputs: Vec<Vec<SubmodelOutput>> = vec![Vec::new(); queries.len()];
        for sm in &self.submodels {
            let (idx, rows): (Vec<usize>, Vec<Vec<f64>>) =
                queries.iter().enumerate().filter_map(|(i, q)| sm.set.row(q).map(|r| (i, r))).unzip();
            if idx.is_empty() {
                continue;
            }
            let x = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
            for (i, out) in idx.into_iter().zip(sm.predict_rows(&x)?) {
                outputs[i].push(out);
            }
        }
        Ok(queries
            .iter()
            .zip(outputs)
            .map(|(q, outs)| {
                let t = self.targets.len();
                let n = outs.len() as f64;
                let values = (0..t)
                    .map(|j| outs.iter().map(|o| clamp_pct(o.blended[j])).sum::<f64>() / n)
                    .collect();
                InversePrediction {
                    id: q.id.clone(),
                    values,
                    contributing: outs.iter().map(|o| o.set).collect(),
                    outputs: outs,
                }
            })
            .collect())
    }

    /// Union scores per element plus per-submodel scores on the rows each
    /// submodel can serve.
    pub fn evaluate(&self, held_out: &Dataset) -> Result<InverseReport, InverseError> {
        let queries: Vec<InverseQuery> = held_out.samples().iter().map(InverseQuery::from).collect();
        let preds = self.predict(&queries)?;
        let truth: Vec<&CorrosionSample> = held_out.samples().iter().collect();
        let y = target_matrix(&truth, &self.targets);

        let union_pred = DMatrix::from_fn(preds.len(), self.targets.len(), |i, j| preds[i].values[j]);
        let union = score_block(&self.targets, &y, &union_pred)?;

        let mut submodels = Vec::new();
        for sm in &self.submodels {
            let mut rows = Vec::new();
            let mut vals = Vec::new();
            for (i, p) in preds.iter().enumerate() {
                if let Some(o) = p.outputs.iter().find(|o| o.set == sm.set) {
                    rows.push(i);
                    vals.push(o.blended.iter().map(|&v| clamp_pct(v)).collect::<Vec<_>>());
                }
            }
            if rows.is_empty() {
                continue;
            }
            let pm = DMatrix::from_fn(rows.len(), self.targets.len(), |i, j| vals[i][j]);
            submodels.push(SubmodelScore { set: sm.set, score: score_block(&self.targets, &y.select_rows(&rows), &pm)? });
        }
        Ok(InverseReport { union, submodels })
    }
}

fn clamp_pct(v: f64) -> f64 {
    v.clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementScore {
    pub element: Element,
    pub metrics: Metrics,
}

/// Per-element metrics over a block of rows plus two summaries: the mean of
/// the defined per-element R² values, and the RMSE pooled over every
/// (row, element) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub rows: usize,
    pub elements: Vec<ElementScore>,
    pub mean_r2: Option<f64>,
    pub pooled_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelScore {
    pub set: InverseFeatureSet,
    pub score: BlockScore,
}

fn score_block(targets: &[Element], y: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<BlockScore, InverseError> {
    let mut elements = Vec::with_capacity(targets.len());
    for (j, &e) in targets.iter().enumerate() {
        let t: Vec<f64> = y.column(j).iter().copied().collect();
        let q: Vec<f64> = p.column(j).iter().copied().collect();
        elements.push(ElementScore { element: e, metrics: compute_metrics(&t, &q)? });
    }
    let r2s: Vec<f64> = elements.iter().filter_map(|s| s.metrics.r2).collect();
    let pooled_mse = elements.iter().map(|s| s.metrics.mse).sum::<f64>() / elements.len() as f64;
    Ok(BlockScore {
        rows: y.nrows(),
        elements,
        mean_r2: (!r2s.is_empty()).then(|| r2s.iter().sum::<f64>() / r2s.len() as f64),
        pooled_rmse: pooled_mse.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseReport {
    pub union: BlockScore,
    pub submodels: Vec<SubmodelScore>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl InverseReport {
    /// `element,r2,rmse,submodel_set`: union rows first, then each submodel's.
    pub fn elements_csv(&self) -> String {
        let mut s = String::from("element,r2,rmse,submodel_set\n");
        let blocks = std::iter::once(("union", &self.union)).chain(self.submodels.iter().map(|m| (m.set.name(), &m.score)));
        for (name, block) in blocks {
            for e in &block.elements {
                let _ = writeln!(s, "{},{},{},{}", e.element, opt(e.metrics.r2), e.metrics.rmse, name);
            }
        }
        s
    }

    /// `submodel_set,rows,mean_r2,pooled_rmse`, one row per submodel then the union.
    pub fn feature_sets_csv(&self) -> String {
        let mut s = String::from("submodel_set,rows,mean_r2,pooled_rmse\n");
        for m in &self.submodels {
            let _ = writeln!(s, "{},{},{},{}", m.set, m.score.rows, opt(m.score.mean_r2), m.score.pooled_rmse);
        }
        let u = &self.union;
        let _ = writeln!(s, "union,{},{},{}", u.rows, opt(u.mean_r2), u.pooled_rmse);
        s
    }
}

/// `query_id,element,predicted_at_pct,contributing_submodels`, submodels
/// joined with `|`.
pub fn predictions_csv(targets: &[Element], preds: &[InversePrediction]) -> String {
    let mut s = String::from("query_id,element,predicted_at_pct,contributing_submodels\n");
    for p in preds {
        let contrib = p.contributing.iter().map(|c| c.name()).collect::<Vec<_>>().join("|");
        for (e, v) in targets.iter().zip(&p.values) {
            let _ = writeln!(s, "{},{},{},{}", csv_field(&p.id), e, v, contrib);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_rule() {
        assert_eq!(pair_weights(Some(0.8), Some(0.2)), [0.8, 0.2]);
        assert_eq!(pair_weights(Some(0.7), Some(0.7)), [0.5, 0.5]);
        assert_eq!(pair_weights(Some(-0.3), Some(-1.0)), [0.5, 0.5]);
        assert_eq!(pair_weights(None, Some(0.4)), [0.0, 1.0]);
        assert_eq!(pair_weights(Some(0.6), Some(-2.0)), [1.0, 0.0]);
    }

    #[test]
    fn feature_rows() {
        let comp = Composition::from_entries(
            crate::dataset::Basis::Atomic,
            [(Element::AL, 90.0), (Element::MG, 4.0), (Element::ZN, 6.0)],
        )
        .unwrap();
        let q = InverseQuery { id: "q".into(), rate: Some(2.0), environment: 3, composition: comp, temperature: None, duration: Some(30.0) };
        assert_eq!(InverseFeatureSet::Base.row(&q), Some(vec![2.0, 3.0, 90.0, 0.0, 4.0]));
        assert_eq!(InverseFeatureSet::BaseDuration.row(&q), Some(vec![2.0, 3.0, 90.0, 0.0, 4.0, 30.0]));
        assert_eq!(InverseFeatureSet::BaseDurationTemperature.row(&q), None);
        assert_eq!(InverseFeatureSet::BaseDurationTemperature.columns().len(), 7);
    }
}
