//! Corrosion records: compositions, unit and grade conversions, ingestion and
//! summaries.

mod csv;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::elements::{Element, N_ELEMENTS};

pub use self::csv::{
    parse_csv, parse_csv_str, parse_query_csv_str, write_csv, IngestError, IngestOptions, IngestReport,
    QueryRecord, RowError, REQUIRED_COLUMNS,
};
pub use self::synthetic::{
    generate_synthetic, generate_synthetic_with, reference_log_rate, SyntheticConfig,
};

/// Tolerance on the "sum ≤ 100" composition invariant.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Millimetres per mil.
pub const MM_PER_MIL: f64 = 0.0254;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("composition is empty or all zeros")]
    ZeroComposition,
    #[error("negative percentage {value} for {element}")]
    NegativePercentage { element: Element, value: f64 },
    #[error("non-finite percentage for {0}")]
    NonFinitePercentage(Element),
    #[error("percentages sum to {0}, above 100")]
    SumAbove100(f64),
    #[error("percentages sum to {sum}, below the strict floor {floor}")]
    SumBelowFloor { sum: f64, floor: f64 },
    #[error("expected a {expected} basis composition")]
    WrongBasis { expected: Basis },
    #[error("unknown rate unit `{0}` (expected mpy or mmpy)")]
    UnknownUnit(String),
    #[error("unknown composition basis `{0}` (expected wt or at)")]
    UnknownBasis(String),
    #[error("invalid grade map: {0}")]
    InvalidGradeMap(String),
    #[error("environment set must hold exactly 9 distinct labels, got {0:?}")]
    InvalidEnvironments(Vec<String>),
    #[error("sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample count must be positive")]
    EmptyRequest,
}

/// Whether percentages are by mass or by atom count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Weight,
    Atomic,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Weight => f.write_str("wt"),
            Basis::Atomic => f.write_str("at"),
        }
    }
}

impl FromStr for Basis {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "wt" | "weight" => Ok(Basis::Weight),
            "at" | "atomic" => Ok(Basis::Atomic),
            other => Err(DatasetError::UnknownBasis(other.to_string())),
        }
    }
}

/// Percentages of the supported elements in one alloy.
///
/// Elements not listed are zero. The sum may fall short of 100 when the balance
/// is unlisted impurities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComposition", into = "RawComposition")]
pub struct Composition {
    basis: Basis,
    percent: [f64; N_ELEMENTS],
}

#[derive(Serialize, Deserialize)]
struct RawComposition {
    basis: Basis,
    percent: std::collections::BTreeMap<Element, f64>,
}

impl TryFrom<RawComposition> for Composition {
    type Error = DatasetError;

    fn try_from(raw: RawComposition) -> Result<Self, Self::Error> {
        Composition::from_entries(raw.basis, raw.percent)
    }
}

impl From<Composition> for RawComposition {
    fn from(c: Composition) -> Self {
        RawComposition {
            basis: c.basis,
            percent: c.nonzero().collect(),
        }
    }
}

impl Composition {
    /// Validates and builds a composition from a dense percentage array.
    pub fn new(basis: Basis, percent: [f64; N_ELEMENTS]) -> Result<Self, DatasetError> {
        let mut sum = 0.0;
        for (e, &p) in Element::all().zip(percent.iter()) {
            if !p.is_finite() {
                return Err(DatasetError::NonFinitePercentage(e));
            }
            if p < 0.0 {
                return Err(DatasetError::NegativePercentage { element: e, value: p });
            }
            sum += p;
        }
        if sum > 100.0 + SUM_TOLERANCE {
            return Err(DatasetError::SumAbove100(sum));
        }
        Ok(Composition { basis, percent })
    }

    pub fn from_entries(
        basis: Basis,
        entries: impl IntoIterator<Item = (Element, f64)>,
    ) -> Result<Self, DatasetError> {
        let mut percent = [0.0; N_ELEMENTS];
        for (e, p) in entries {
            percent[e.index()] += p;
        }
        Composition::new(basis, percent)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn get(&self, e: Element) -> f64 {
        self.percent[e.index()]
    }

    pub fn as_array(&self) -> &[f64; N_ELEMENTS] {
        &self.percent
    }

    pub fn total(&self) -> f64 {
        self.percent.iter().sum()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (Element, f64)> + '_ {
        Element::all()
            .zip(self.percent.iter().copied())
            .filter(|(_, p)| *p != 0.0)
    }

    /// Rejects compositions whose total falls below `floor` percent.
    pub fn check_floor(&self, floor: f64) -> Result<(), DatasetError> {
        let sum = self.total();
        if sum < floor {
            return Err(DatasetError::SumBelowFloor { sum, floor });
        }
        Ok(())
    }
}

fn reweigh(
    c: &Composition,
    expected: Basis,
    target: Basis,
    factor: impl Fn(Element) -> f64,
) -> Result<Composition, DatasetError> {
    if c.basis != expected {
        return Err(DatasetError::WrongBasis { expected });
    }
    // With a dense representation an empty composition and an all-zero one
    // are the same thing.
    if c.percent.iter().all(|&p| p == 0.0) {
        return Err(DatasetError::ZeroComposition);
    }
    let mut scaled = [0.0; N_ELEMENTS];
    let mut total = 0.0;
    for e in Element::all() {
        let v = c.percent[e.index()] * factor(e);
        scaled[e.index()] = v;
        total += v;
    }
    for v in scaled.iter_mut() {
        *v = *v / total * 100.0;
    }
    Ok(Composition {
        basis: target,
        percent: scaled,
    })
}

/// Converts weight percent to atomic percent over the listed elements.
///
/// `at_i = (wt_i / M_i) / Σ_j (wt_j / M_j) · 100`; the output sums to 100.
pub fn wt_to_at(c: &Composition) -> Result<Composition, DatasetError> {
    reweigh(c, Basis::Weight, Basis::Atomic, |e| 1.0 / e.atomic_mass())
}

/// Converts atomic percent to weight percent; the inverse of [`wt_to_at`].
pub fn at_to_wt(c: &Composition) -> Result<Composition, DatasetError> {
    reweigh(c, Basis::Atomic, Basis::Weight, Element::atomic_mass)
}

/// Corrosion rate units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    /// Mils (thousandths of an inch) per year.
    Mpy,
    /// Millimetres per year.
    Mmpy,
}

impl FromStr for RateUnit {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mpy" => Ok(RateUnit::Mpy),
            "mmpy" => Ok(RateUnit::Mmpy),
            other => Err(DatasetError::UnknownUnit(other.to_string())),
        }
    }
}

impl fmt::Display for RateUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateUnit::Mpy => f.write_str("mpy"),
            RateUnit::Mmpy => f.write_str("mmpy"),
        }
    }
}

/// `mmpy = mpy × 0.0254`.
pub fn convert_rate(value: f64, from: RateUnit, to: RateUnit) -> f64 {
    match (from, to) {
        (RateUnit::Mpy, RateUnit::Mmpy) => value * MM_PER_MIL,
        (RateUnit::Mmpy, RateUnit::Mpy) => value / MM_PER_MIL,
        _ => value,
    }
}

/// Representative rates (mpy) for the letter grades A–D.
///
/// There is no authoritative table for these; [`GradeMap::default`] is a
/// convention only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct GradeMap([f64; 4]);

impl GradeMap {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, DatasetError> {
        let values = [a, b, c, d];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DatasetError::InvalidGradeMap(
                "rates must be finite and non-negative".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::InvalidGradeMap(
                "rates must increase strictly from A to D".into(),
            ));
        }
        Ok(GradeMap(values))
    }

    /// Rate for a grade letter (`A`–`D`, case-insensitive).
    pub fn rate(&self, grade: &str) -> Option<f64> {
        match grade.trim() {
            "A" | "a" => Some(self.0[0]),
            "B" | "b" => Some(self.0[1]),
            "C" | "c" => Some(self.0[2]),
            "D" | "d" => Some(self.0[3]),
            _ => None,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for GradeMap {
    fn default() -> Self {
        GradeMap([1.0, 5.0, 20.0, 50.0])
    }
}

impl TryFrom<[f64; 4]> for GradeMap {
    type Error = DatasetError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        GradeMap::new(v[0], v[1], v[2], v[3])
    }
}

impl From<GradeMap> for [f64; 4] {
    fn from(g: GradeMap) -> Self {
        g.0
    }
}

impl fmt::Display for GradeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "A={a},B={b},C={c},D={d}")
    }
}

/// Parses `A=1,B=5,C=20,D=50`. All four grades must be given exactly once.
impl FromStr for GradeMap {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut slots: [Option<f64>; 4] = [None; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| DatasetError::InvalidGradeMap(format!("`{part}` is not KEY=VALUE")))?;
            let slot = match key.trim() {
                "A" | "a" => 0,
                "B" | "b" => 1,
                "C" | "c" => 2,
                "D" | "d" => 3,
                other => {
                    return Err(DatasetError::InvalidGradeMap(format!("unknown grade `{other}`")))
                }
            };
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| DatasetError::InvalidGradeMap(format!("bad number in `{part}`")))?;
            if slots[slot].replace(v).is_some() {
                return Err(DatasetError::InvalidGradeMap(format!("grade `{key}` repeated")));
            }
        }
        match slots {
            [Some(a), Some(b), Some(c), Some(d)] => GradeMap::new(a, b, c, d),
            _ => Err(DatasetError::InvalidGradeMap("all of A, B, C, D are required".into())),
        }
    }
}

/// Number of environment categories.
pub const N_ENVIRONMENTS: usize = 9;

/// The nine environment labels, kept in lexicographic order; an environment
/// id is the label's position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Environments(Vec<String>);

impl Environments {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, DatasetError> {
        let mut labels: Vec<String> = labels.into_iter().map(|s| s.into().trim().to_string()).collect();
        labels.sort();
        let n = labels.len();
        let mut dedup = labels.clone();
        dedup.dedup();
        if n != N_ENVIRONMENTS || dedup.len() != n || labels.iter().any(|l| l.is_empty()) {
            return Err(DatasetError::InvalidEnvironments(labels));
        }
        Ok(Environments(labels))
    }

    pub fn id_of(&self, label: &str) -> Option<u8> {
        self.0
            .binary_search_by(|l| l.as_str().cmp(label.trim()))
            .ok()
            .map(|i| i as u8)
    }

    pub fn label(&self, id: u8) -> Option<&str> {
        self.0.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

impl Default for Environments {
    fn default() -> Self {
        Environments::new([
            "brackish_water",
            "distilled_water",
            "fresh_water",
            "marine_atmosphere",
            "nacl_solution",
            "seawater",
            "seawater_immersion_flowing",
            "sulfate_solution",
            "tap_water",
        ])
        .expect("default environment labels are valid")
    }
}

impl TryFrom<Vec<String>> for Environments {
    type Error = DatasetError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Environments::new(v)
    }
}

impl From<Environments> for Vec<String> {
    fn from(e: Environments) -> Self {
        e.0
    }
}

/// One alloy exposure record. Compositions are atomic percent; rates are mpy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrosionSample {
    pub id: String,
    pub composition: Composition,
    pub environment: u8,
    pub temperature: Option<f64>,
    pub duration: Option<f64>,
    pub rate: f64,
}

impl CorrosionSample {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |reason: String| DatasetError::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if self.environment as usize >= N_ENVIRONMENTS {
            return Err(fail(format!("environment id {} out of range", self.environment)));
        }
        if !self.rate.is_finite() || self.rate < 0.0 {
            return Err(fail(format!("rate {} must be finite and non-negative", self.rate)));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() {
                return Err(fail("temperature is not finite".into()));
            }
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d > 0.0) {
                return Err(fail(format!("duration {d} must be strictly positive")));
            }
        }
        if self.composition.basis() != Basis::Atomic {
            return Err(fail("composition must be atomic percent".into()));
        }
        Ok(())
    }
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct Dataset {
    environments: Environments,
    samples: Vec<CorrosionSample>,
}

#[derive(Deserialize)]
struct RawDataset {
    environments: Environments,
    samples: Vec<CorrosionSample>,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = DatasetError;

    fn try_from(raw: RawDataset) -> Result<Self, Self::Error> {
        Dataset::new(raw.environments, raw.samples)
    }
}

impl Dataset {
    pub fn new(
        environments: Environments,
        samples: Vec<CorrosionSample>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(DatasetError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Dataset {
            environments,
            samples,
        })
    }

    pub fn empty(environments: Environments) -> Self {
        Dataset {
            environments,
            samples: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[CorrosionSample] {
        &self.samples
    }

    pub fn environments(&self) -> &Environments {
        &self.environments
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps the samples for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&CorrosionSample) -> bool) -> Dataset {
        Dataset {
            environments: self.environments.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Selects samples by position.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            environments: self.environments.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Dataset, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Replaces the sample list without revalidating ids. Crate-internal.
    pub(crate) fn with_samples(&self, samples: Vec<CorrosionSample>) -> Dataset {
        Dataset {
            environments: self.environments.clone(),
            samples,
        }
    }
}

/// Per-element count of nonzero entries and maximum percentage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementStat {
    pub element: Element,
    pub count: usize,
    pub max: f64,
}

/// Sample counts and per-element statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub with_temperature: usize,
    pub with_duration: usize,
    pub with_both: usize,
    pub elements: Vec<ElementStat>,
}

pub fn summarize(d: &Dataset) -> Summary {
    let mut elements: Vec<ElementStat> = Element::all()
        .map(|element| ElementStat {
            element,
            count: 0,
            max: 0.0,
        })
        .collect();
    let (mut temp, mut dur, mut both) = (0, 0, 0);
    for s in d.samples() {
        temp += s.temperature.is_some() as usize;
        dur += s.duration.is_some() as usize;
        both += (s.temperature.is_some() && s.duration.is_some()) as usize;
        for (e, p) in s.composition.nonzero() {
            let stat = &mut elements[e.index()];
            stat.count += 1;
            stat.max = stat.max.max(p);
        }
    }
    Summary {
        samples: d.len(),
        with_temperature: temp,
        with_duration: dur,
        with_both: both,
        elements,
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28}{:>8}", "Variable", "Count")?;
        writeln!(f, "{:<28}{:>8}", format!("Elements (Count: {N_ELEMENTS})"), self.samples)?;
        writeln!(
            f,
            "{:<28}{:>8}",
            format!("Environments (Count: {N_ENVIRONMENTS})"),
            self.samples
        )?;
        writeln!(f, "{:<28}{:>8}", "Temperature (deg C)", self.with_temperature)?;
        writeln!(f, "{:<28}{:>8}", "Duration (days)", self.with_duration)?;
        writeln!(f, "{:<28}{:>8}", "Temperature and duration", self.with_both)?;
        writeln!(f, "{:<28}{:>8}", "Corrosion Rate (mils/year)", self.samples)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<8}{:>7}{:>10}    {:<8}{:>7}{:>10}",
            "Element", "Count", "Max", "Element", "Count", "Max"
        )?;
        for pair in self.elements.chunks(2) {
            for (i, stat) in pair.iter().enumerate() {
                if i > 0 {
                    write!(f, "    ")?;
                }
                write!(f, "{:<8}{:>7}{:>10.3}", stat.element.symbol(), stat.count, stat.max)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
