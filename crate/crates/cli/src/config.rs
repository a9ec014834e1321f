//! The run configuration: every setting a command reads, with the defaults
//! spelled out in the resolved copy each command writes next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use corrml::dataset::{Basis, Environments, GradeMap, IngestOptions};
use corrml::evaluation::Protocol;
use corrml::forward::{ForwardConfig, ForwardKind};
use corrml::inverse::InverseConfig;
use corrml::preprocess::FeatureSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Forward model trained by `train-forward`.
    pub model: ForwardKind,
    pub features: FeatureSet,
    pub dataset: DatasetSection,
    pub generate: GenerateSection,
    pub protocol: Protocol,
    pub compare: CompareSection,
    pub forward: ForwardConfig,
    pub inverse: InverseConfig,
    pub predict: PredictSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: ForwardKind::Gpr,
            features: FeatureSet::CompEnv,
            dataset: DatasetSection::default(),
            generate: GenerateSection::default(),
            protocol: Protocol::default(),
            compare: CompareSection::default(),
            forward: ForwardConfig::default(),
            inverse: InverseConfig::default(),
            predict: PredictSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// A CSV in the ingest format or a dataset file written by `ingest`.
    pub path: PathBuf,
    pub units: Basis,
    /// Rates (mpy) for grades A–D.
    pub grade_map: GradeMap,
    pub environments: Environments,
    /// Reject compositions summing below this percentage.
    pub strict_floor: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            path: PathBuf::from("dataset.csv"),
            units: Basis::Atomic,
            grade_map: GradeMap::default(),
            environments: Environments::default(),
            strict_floor: None,
        }
    }
}

impl DatasetSection {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            basis: self.units,
            grade_map: self.grade_map,
            environments: self.environments.clone(),
            strict_floor: self.strict_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub n: usize,
    /// Log-scale noise standard deviation.
    pub noise: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { n: 331, noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub models: Vec<ForwardKind>,
    pub features: Vec<FeatureSet>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            models: ForwardKind::ALL.to_vec(),
            features: vec![FeatureSet::Comp, FeatureSet::CompEnv],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub direction: Direction,
    /// Model file from `train-forward` or `train-inverse`.
    pub model: PathBuf,
    /// Query CSV; rate columns are optional for forward queries.
    pub input: PathBuf,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            direction: Direction::Forward,
            model: PathBuf::from("model.json"),
            input: PathBuf::from("queries.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Directory holding the CSVs to render.
    pub input: PathBuf,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { input: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    /// Every field written out, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}
