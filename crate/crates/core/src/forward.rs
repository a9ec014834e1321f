//! Forward models: composition (+ context) → corrosion rate in mpy.
//!
//! Wraps the four families behind one fit/predict interface together with
//! the column scaling each one needs. Forests see raw features; the network
//! and both GPs see standardized ones.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::gpr::{fit_gpr, fit_log_gpr, BackTransform, GprConfig, GprError, GprModel, GprModelFile, LogGprModel};
use crate::kernels::{KernelError, KernelSpec, Nu};
use crate::neural::{train_dnn, DenseNetwork, NeuralError, TrainConfig};
use crate::preprocess::{FeatureSet, PreprocessError, ScalerState, DEFAULT_LOG_SHIFT};
use crate::trees::{fit_forest, ForestConfig, RandomForest, TreeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForwardError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Gpr(#[from] GprError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("unknown model {0:?} (expected rf, dnn, gpr or loggpr)")]
    UnknownModel(String),
    #[error("query columns {got:?} do not match the model's {expected:?}")]
    Schema { expected: Vec<String>, got: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardKind {
    Rf,
    Dnn,
    Gpr,
    #[serde(rename = "loggpr")]
    LogGpr,
}

impl ForwardKind {
    pub const ALL: [ForwardKind; 4] = [ForwardKind::Rf, ForwardKind::Dnn, ForwardKind::Gpr, ForwardKind::LogGpr];

    pub fn name(self) -> &'static str {
        match self {
            ForwardKind::Rf => "rf",
            ForwardKind::Dnn => "dnn",
            ForwardKind::Gpr => "gpr",
            ForwardKind::LogGpr => "loggpr",
        }
    }

    pub fn needs_scaling(self) -> bool {
        self != ForwardKind::Rf
    }
}

impl fmt::Display for ForwardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForwardKind {
    type Err = ForwardError;

    fn from_str(s: &str) -> Result<Self, ForwardError> {
        ForwardKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ForwardError::UnknownModel(s.to_string()))
    }
}

/// Kernel structure without dimensions; lengthscales and variances are set
/// when the GP is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelShape {
    Rbf,
    Matern { nu: Nu },
    Sum { left: Box<KernelShape>, right: Box<KernelShape> },
}

impl KernelShape {
    /// Unit lengthscales over `d` inputs and unit variances.
    pub fn instantiate(&self, d: usize) -> Result<KernelSpec, KernelError> {
        match self {
            KernelShape::Rbf => KernelSpec::rbf(vec![1.0; d], 1.0),
            KernelShape::Matern { nu } => KernelSpec::matern(*nu, vec![1.0; d], 1.0),
            KernelShape::Sum { left, right } => KernelSpec::sum(left.instantiate(d)?, right.instantiate(d)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprSettings {
    pub kernel: KernelShape,
    pub training: GprConfig,
}

impl Default for GprSettings {
    fn default() -> Self {
        GprSettings { kernel: KernelShape::Matern { nu: Nu::ThreeHalves }, training: GprConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogGprSettings {
    pub kernel: KernelShape,
    pub training: GprConfig,
    pub shift: f64,
    pub back_transform: BackTransform,
}

impl Default for LogGprSettings {
    fn default() -> Self {
        LogGprSettings {
            kernel: KernelShape::Sum {
                left: Box::new(KernelShape::Rbf),
                right: Box::new(KernelShape::Matern { nu: Nu::FiveHalves }),
            },
            training: GprConfig::default(),
            shift: DEFAULT_LOG_SHIFT,
            back_transform: BackTransform::Median,
        }
    }
}

/// Hyperparameters for every family. The `seed` fields inside `rf` and
/// `dnn` are overwritten by the seed passed to [`fit_forward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub rf: ForestConfig,
    pub dnn: TrainConfig,
    pub gpr: GprSettings,
    pub loggpr: LogGprSettings,
}

#[derive(Debug, Clone)]
pub enum ForwardModel {
    Rf(RandomForest),
    Dnn(DenseNetwork),
    Gpr(GprModel),
    LogGpr(LogGprModel),
}

/// A fitted forward model with the column schema and scaler it was trained with.
#[derive(Debug, Clone)]
pub struct TrainedForward {
    pub kind: ForwardKind,
    pub feature_set: FeatureSet,
    pub columns: Vec<String>,
    pub scaler: Option<ScalerState>,
    pub model: ForwardModel,
}

/// Fits `kind` on the raw feature matrix `x` (rows aligned with `y`).
pub fn fit_forward(
    kind: ForwardKind,
    feature_set: FeatureSet,
    columns: Vec<String>,
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &ForwardConfig,
    seed: u64,
) -> Result<TrainedForward, ForwardError> {
    let scaler = if kind.needs_scaling() { Some(ScalerState::fit(x)?) } else { None };
    let xs = match &scaler {
        Some(s) => s.apply(x)?,
        None => x.clone(),
    };
    let d = x.ncols();
    let model = match kind {
        ForwardKind::Rf => ForwardModel::Rf(fit_forest(&xs, y, &ForestConfig { seed, ..cfg.rf.clone() })?),
        ForwardKind::Dnn => {
            let t = train_dnn(&xs, y, &TrainConfig { seed, ..cfg.dnn.clone() })?;
            ForwardModel::Dnn(t.net)
        }
        ForwardKind::Gpr => {
            let template = cfg.gpr.kernel.instantiate(d)?;
            ForwardModel::Gpr(fit_gpr(&xs, y, &template, &cfg.gpr.training)?)
        }
        ForwardKind::LogGpr => {
            let s = &cfg.loggpr;
            let template = s.kernel.instantiate(d)?;
            ForwardModel::LogGpr(fit_log_gpr(&xs, y, &template, &s.training, s.shift, s.back_transform)?)
        }
    };
    Ok(TrainedForward { kind, feature_set, columns, scaler, model })
}

impl TrainedForward {
    /// Predicted rates (mpy) for raw feature rows laid out as `self.columns`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, ForwardError> {
        if x.ncols() != self.columns.len() {
            return Err(PreprocessError::ColumnMismatch { expected: self.columns.len(), got: x.ncols() }.into());
        }
        let xs = match &self.scaler {
            Some(s) => s.apply(x)?,
            None => x.clone(),
        };
        Ok(match &self.model {
            ForwardModel::Rf(m) => m.predict(&xs)?,
            ForwardModel::Dnn(m) => m.forward_batch(&xs)?,
            ForwardModel::Gpr(m) => m.predict(&xs)?.0,
            ForwardModel::LogGpr(m) => m.predict(&xs)?,
        })
    }

    /// Checks that `columns` matches the training schema exactly.
    pub fn check_columns(&self, columns: &[String]) -> Result<(), ForwardError> {
        if columns != self.columns {
            return Err(ForwardError::Schema { expected: self.columns.clone(), got: columns.to_vec() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ForwardFile::from(self)).expect("forward model serializes")
    }

    pub fn from_json(text: &str) -> Result<TrainedForward, ForwardFileError> {
        let f: ForwardFile = serde_json::from_str(text)?;
        Ok(f.try_into()?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForwardFileError {
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent model file: {0}")]
    Model(#[from] ForwardError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardFile {
    kind: ForwardKind,
    feature_set: FeatureSet,
    columns: Vec<String>,
    scaler: Option<ScalerState>,
    model: ModelFile,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
enum ModelFile {
    Rf { forest: RandomForest },
    Dnn { network: DenseNetwork },
    Gpr { gp: GprModelFile },
    #[serde(rename = "loggpr")]
    LogGpr { gp: GprModelFile, shift: f64, back_transform: BackTransform },
}

impl From<&TrainedForward> for ForwardFile {
    fn from(t: &TrainedForward) -> Self {
        let model = match &t.model {
            ForwardModel::Rf(m) => ModelFile::Rf { forest: m.clone() },
            ForwardModel::Dnn(m) => ModelFile::Dnn { network: m.clone() },
            ForwardModel::Gpr(m) => ModelFile::Gpr { gp: m.to_file() },
            ForwardModel::LogGpr(m) => ModelFile::LogGpr {
                gp: m.inner.to_file(),
                shift: m.shift,
                back_transform: m.back_transform,
            },
        };
        ForwardFile {
            kind: t.kind,
            feature_set: t.feature_set,
            columns: t.columns.clone(),
            scaler: t.scaler.clone(),
            model,
        }
    }
}

impl TryFrom<ForwardFile> for TrainedForward {
    type Error = ForwardError;

    fn try_from(f: ForwardFile) -> Result<Self, ForwardError> {
        let (model, d) = match f.model {
            ModelFile::Rf { forest } => {
                let d = forest.n_features();
                (ForwardModel::Rf(forest), d)
            }
            ModelFile::Dnn { network } => {
                let d = network.input_dim();
                (ForwardModel::Dnn(network), d)
            }
            ModelFile::Gpr { gp } => {
                let m = GprModel::from_file(gp)?;
                let d = m.n_features();
                (ForwardModel::Gpr(m), d)
            }
            ModelFile::LogGpr { gp, shift, back_transform } => {
                let inner = GprModel::from_file(gp)?;
                let d = inner.n_features();
                (ForwardModel::LogGpr(LogGprModel { inner, shift, back_transform }), d)
            }
        };
        let kind_matches = matches!(
            (f.kind, &model),
            (ForwardKind::Rf, ForwardModel::Rf(_))
                | (ForwardKind::Dnn, ForwardModel::Dnn(_))
                | (ForwardKind::Gpr, ForwardModel::Gpr(_))
                | (ForwardKind::LogGpr, ForwardModel::LogGpr(_))
        );
        let scaler_ok = match &f.scaler {
            Some(s) => f.kind.needs_scaling() && s.means.len() == d && s.stds.len() == d && s.constant.len() == d,
            None => !f.kind.needs_scaling(),
        };
        if !kind_matches || !scaler_ok || f.columns.len() != d {
            return Err(ForwardError::Schema {
                expected: f.columns.clone(),
                got: vec![format!("{d} model inputs ({})", f.kind)],
            });
        }
        Ok(TrainedForward { kind: f.kind, feature_set: f.feature_set, columns: f.columns, scaler: f.scaler, model })
    }
}
