//! CSV ingestion.
//!
//! Header (exact names): `id, env, temp_c, duration_days, rate, rate_unit,
//! grade`, then one column per element symbol. Empty element cells are zero;
//! empty `temp_c` / `duration_days` are missing; each row needs a `rate` (with
//! `rate_unit`) or a `grade`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::elements::{Element, N_ELEMENTS};

use super::{
    convert_rate, wt_to_at, Basis, Composition, CorrosionSample, Dataset, Environments, GradeMap,
    RateUnit,
};

pub const REQUIRED_COLUMNS: [&str; 7] = [
    "id",
    "env",
    "temp_c",
    "duration_days",
    "rate",
    "rate_unit",
    "grade",
];

/// Columns a query file (rows without a known rate) must carry.
const QUERY_COLUMNS: [&str; 4] = ["id", "env", "temp_c", "duration_days"];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub basis: Basis,
    pub grade_map: GradeMap,
    pub environments: Environments,
    /// When set, compositions summing below this percentage are rejected.
    pub strict_floor: Option<f64>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            basis: Basis::Atomic,
            grade_map: GradeMap::default(),
            environments: Environments::default(),
            strict_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line in the file.
    pub line: u64,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "row {} (id `{}`): {}", self.line, id, self.message),
            None => write!(f, "row {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}` (not a supported element symbol)")]
    UnknownColumn(String),
    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),
    #[error("{} invalid row(s):\n{}", .0.len(), join_rows(.0))]
    Rows(Vec<RowError>),
}

fn join_rows(rows: &[RowError]) -> String {
    rows.iter()
        .map(|r| format!("  {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A parsed dataset plus per-row notes on resolved ambiguities.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub notes: Vec<String>,
}

/// A row of a query file; the rate is present only if the file gave one.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub composition: Composition,
    pub environment: u8,
    pub temperature: Option<f64>,
    pub duration: Option<f64>,
    pub rate: Option<f64>,
}

pub fn parse_csv(path: &Path, opts: &IngestOptions) -> Result<IngestReport, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv_str(&text, opts)
}

/// Parses a dataset from CSV text. Every row must carry a rate or a grade.
pub fn parse_csv_str(text: &str, opts: &IngestOptions) -> Result<IngestReport, IngestError> {
    let (records, notes) = parse_records(text, opts, true)?;
    let samples = records
        .into_iter()
        .map(|r| CorrosionSample {
            id: r.id,
            composition: r.composition,
            environment: r.environment,
            temperature: r.temperature,
            duration: r.duration,
            rate: r.rate.expect("rate required"),
        })
        .collect();
    // ids and fields were validated row by row
    let dataset = Dataset::new(opts.environments.clone(), samples)
        .map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(IngestReport { dataset, notes })
}

/// Parses query rows for prediction; `rate`, `rate_unit` and `grade` columns
/// are optional.
pub fn parse_query_csv_str(
    text: &str,
    opts: &IngestOptions,
) -> Result<Vec<QueryRecord>, IngestError> {
    parse_records(text, opts, false).map(|(records, _)| records)
}

/// Writes `d` in the ingest format: atomic percent, rates in mpy, and one
/// column per element present anywhere in the dataset. Parsing the result
/// with default options reproduces `d` exactly.
pub fn write_csv(d: &Dataset) -> String {
    let mut used = [false; N_ELEMENTS];
    for s in d.samples() {
        for (e, _) in s.composition.nonzero() {
            used[e.index()] = true;
        }
    }
    let elements: Vec<Element> = Element::all().filter(|e| used[e.index()]).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = REQUIRED_COLUMNS
        .iter()
        .copied()
        .chain(elements.iter().map(|e| e.symbol()));
    w.write_record(header).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in d.samples() {
        let env = d.environments().label(s.environment).unwrap_or_default();
        let mut row = vec![
            s.id.clone(),
            env.to_string(),
            opt(s.temperature),
            opt(s.duration),
            s.rate.to_string(),
            RateUnit::Mpy.to_string(),
            String::new(),
        ];
        row.extend(elements.iter().map(|&e| {
            let v = s.composition.get(e);
            if v == 0.0 { String::new() } else { v.to_string() }
        }));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

enum Column {
    Id,
    Env,
    Temp,
    Duration,
    Rate,
    RateUnit,
    Grade,
    Element(Element),
}

fn classify(name: &str) -> Result<Column, IngestError> {
    Ok(match name {
        "id" => Column::Id,
        "env" => Column::Env,
        "temp_c" => Column::Temp,
        "duration_days" => Column::Duration,
        "rate" => Column::Rate,
        "rate_unit" => Column::RateUnit,
        "grade" => Column::Grade,
        other => Column::Element(
            other
                .parse()
                .map_err(|_| IngestError::UnknownColumn(other.to_string()))?,
        ),
    })
}

fn parse_records(
    text: &str,
    opts: &IngestOptions,
    require_target: bool,
) -> Result<(Vec<QueryRecord>, Vec<String>), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();

    let mut seen = HashSet::new();
    let mut columns = Vec::with_capacity(header.len());
    for name in header.iter() {
        if !seen.insert(name.to_string()) {
            return Err(IngestError::DuplicateColumn(name.to_string()));
        }
        columns.push(classify(name)?);
    }
    let required: &[&str] = if require_target {
        &REQUIRED_COLUMNS
    } else {
        &QUERY_COLUMNS
    };
    for col in required {
        if !seen.contains(*col) {
            return Err(IngestError::MissingColumn(col.to_string()));
        }
    }

    let mut records = Vec::new();
    let mut notes = Vec::new();
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| line_at(text, p.byte())).unwrap_or(0);
                errors.push(RowError {
                    line,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| line_at(text, p.byte())).unwrap_or(0);
        let id = record
            .iter()
            .zip(&columns)
            .find(|(_, c)| matches!(c, Column::Id))
            .map(|(v, _)| v.to_string())
            .filter(|v| !v.is_empty());
        match parse_row(&record, &columns, opts, require_target) {
            Ok((rec, note)) => {
                if !ids.insert(rec.id.clone()) {
                    errors.push(RowError {
                        line,
                        id,
                        message: "duplicate id".into(),
                    });
                    continue;
                }
                if let Some(note) = note {
                    log::info!("row {line}: {note}");
                    notes.push(format!("row {line} (id `{}`): {note}", rec.id));
                }
                records.push(rec);
            }
            Err(message) => errors.push(RowError { line, id, message }),
        }
    }
    if !errors.is_empty() {
        return Err(IngestError::Rows(errors));
    }
    Ok((records, notes))
}

/// 1-based line of the record starting at byte `offset`. The reader's own
/// line numbers, and its offsets, lag by one terminator on CRLF input.
fn line_at(text: &str, offset: u64) -> u64 {
    let bytes = text.as_bytes();
    let mut end = (offset as usize).min(bytes.len());
    while end < bytes.len() && matches!(bytes[end], b'\r' | b'\n') {
        end += 1;
    }
    1 + bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64
}

fn number(field: &str, cell: &str) -> Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("cannot parse `{cell}` in `{field}` as a number"))?;
    if !v.is_finite() {
        return Err(format!("`{field}` must be finite, got `{cell}`"));
    }
    Ok(Some(v))
}

fn parse_row(
    record: &csv::StringRecord,
    columns: &[Column],
    opts: &IngestOptions,
    require_target: bool,
) -> Result<(QueryRecord, Option<String>), String> {
    let mut id = String::new();
    let mut env = None;
    let mut temperature = None;
    let mut duration = None;
    let mut rate = None;
    let mut unit_cell = "";
    let mut grade_cell = "";
    let mut percent = [0.0; N_ELEMENTS];

    for (cell, column) in record.iter().zip(columns) {
        match column {
            Column::Id => id = cell.to_string(),
            Column::Env => {
                env = Some(
                    opts.environments
                        .id_of(cell)
                        .ok_or_else(|| format!("unknown environment `{cell}`"))?,
                )
            }
            Column::Temp => temperature = number("temp_c", cell)?,
            Column::Duration => duration = number("duration_days", cell)?,
            Column::Rate => rate = number("rate", cell)?,
            Column::RateUnit => unit_cell = cell,
            Column::Grade => grade_cell = cell,
            Column::Element(e) => {
                let v = number(e.symbol(), cell)?.unwrap_or(0.0);
                if v < 0.0 {
                    return Err(format!("negative percentage {v} for {e}"));
                }
                percent[e.index()] = v;
            }
        }
    }

    if id.is_empty() {
        return Err("empty id".into());
    }
    let environment = env.ok_or("missing environment")?;
    if let Some(d) = duration {
        if d <= 0.0 {
            return Err(format!("duration_days must be positive, got {d}"));
        }
    }

    let mut note = None;
    let rate_mpy = match (rate, grade_cell.is_empty()) {
        (Some(r), grade_empty) => {
            if r < 0.0 {
                return Err(format!("negative rate {r}"));
            }
            if unit_cell.is_empty() {
                return Err("rate given without rate_unit".into());
            }
            let unit: RateUnit = unit_cell
                .parse()
                .map_err(|_| format!("unknown rate unit `{unit_cell}`"))?;
            if !grade_empty {
                note = Some(format!(
                    "both rate and grade `{grade_cell}` present; rate used"
                ));
            }
            Some(convert_rate(r, unit, RateUnit::Mpy))
        }
        (None, false) => Some(
            opts.grade_map
                .rate(grade_cell)
                .ok_or_else(|| format!("unknown grade `{grade_cell}`"))?,
        ),
        (None, true) => {
            if require_target {
                return Err("neither rate nor grade given".into());
            }
            None
        }
    };
    if !unit_cell.is_empty() && rate.is_none() {
        // a stray unit is harmless but must still be a valid token
        unit_cell
            .parse::<RateUnit>()
            .map_err(|_| format!("unknown rate unit `{unit_cell}`"))?;
    }

    let composition = Composition::new(opts.basis, percent).map_err(|e| e.to_string())?;
    let composition = match opts.basis {
        Basis::Weight => wt_to_at(&composition).map_err(|e| e.to_string())?,
        Basis::Atomic => {
            if composition.total() == 0.0 {
                return Err("composition is empty or all zeros".into());
            }
            composition
        }
    };
    if let Some(floor) = opts.strict_floor {
        // atomic totals from a weight basis are always 100; check the input
        let input_total: f64 = percent.iter().sum();
        if input_total < floor {
            return Err(format!(
                "composition sums to {input_total}, below the strict floor {floor}"
            ));
        }
    }

    Ok((
        QueryRecord {
            id,
            composition,
            environment,
            temperature,
            duration,
            rate: rate_mpy,
        },
        note,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,env,temp_c,duration_days,rate,rate_unit,grade,Al,Mg,Zn";

    fn parse(rows: &[&str]) -> Result<IngestReport, IngestError> {
        let text = std::iter::once(HEADER)
            .chain(rows.iter().copied())
            .collect::<Vec<_>>()
            .join("\n");
        parse_csv_str(&text, &IngestOptions::default())
    }

    fn row_errors(err: IngestError) -> Vec<RowError> {
        match err {
            IngestError::Rows(rows) => rows,
            other => panic!("expected row errors, got {other}"),
        }
    }

    #[test]
    fn mmpy_rates_are_converted() {
        let r = parse(&["s1,seawater,,,2.54,mmpy,,95,5,"]).unwrap();
        let s = &r.dataset.samples()[0];
        assert!((s.rate - 100.0).abs() < 1e-12);
        assert_eq!(s.temperature, None);
        assert_eq!(s.composition.get(Element::ZN), 0.0);
    }

    #[test]
    fn grade_only_row_uses_grade_map() {
        let r = parse(&["s1,seawater,25,30,,,B,95,5,"]).unwrap();
        assert_eq!(r.dataset.samples()[0].rate, 5.0);
        assert_eq!(r.dataset.samples()[0].duration, Some(30.0));
    }

    #[test]
    fn rate_wins_over_grade_and_is_noted() {
        let r = parse(&["s1,seawater,,,3,mpy,D,95,5,"]).unwrap();
        assert_eq!(r.dataset.samples()[0].rate, 3.0);
        assert_eq!(r.notes.len(), 1);
        assert!(r.notes[0].contains("rate used"));
    }

    #[test]
    fn unknown_environment_is_a_row_error() {
        let rows = row_errors(parse(&["s1,seawater,,,1,mpy,,95,5,", "s2,lava,,,1,mpy,,95,5,"]).unwrap_err());
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].line, 3);
        assert_eq!(rows[0].id.as_deref(), Some("s2"));
        assert!(rows[0].message.contains("lava"));
    }

    #[test]
    fn row_level_validation() {
        let rows = row_errors(
            parse(&[
                "a,seawater,,,-1,mpy,,95,5,",
                "b,seawater,,,1,furlong,,95,5,",
                "c,seawater,,,x,mpy,,95,5,",
                "d,seawater,,0,1,mpy,,95,5,",
                "e,seawater,,,,,,95,5,",
                "f,seawater,,,1,mpy,,60,50,",
                "g,seawater,,,1,mpy,,,,",
                "h,seawater,,,1,,,95,5,",
                "i,seawater,,,1,mpy,Q,95,5,",
                "j,seawater,,,,,Q,95,5,",
                ",seawater,,,1,mpy,,95,5,",
                "k,seawater,,,1,mpy,,-1,5,",
            ])
            .unwrap_err(),
        );
        let lines: Vec<u64> = rows.iter().map(|r| r.line).collect();
        // row i carries a bad grade alongside a valid rate: rate wins
        assert_eq!(lines, vec![2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13]);
        assert!(rows[1].message.contains("furlong"));
    }

    #[test]
    fn header_errors() {
        let opts = IngestOptions::default();
        assert!(matches!(
            parse_csv_str("id,env,temp_c,duration_days,rate,rate_unit,Al\n", &opts),
            Err(IngestError::MissingColumn(c)) if c == "grade"
        ));
        assert!(matches!(
            parse_csv_str(&format!("{HEADER},Unobtainium\n"), &opts),
            Err(IngestError::UnknownColumn(c)) if c == "Unobtainium"
        ));
        assert!(matches!(
            parse_csv_str(&format!("{HEADER},Al\n"), &opts),
            Err(IngestError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = row_errors(parse(&["a,seawater,,,1,mpy,,95,5,", "a,seawater,,,1,mpy,,95,5,"]).unwrap_err());
        assert_eq!(rows[0].message, "duplicate id");
    }

    #[test]
    fn weight_basis_is_converted_to_atomic() {
        let text = format!("{HEADER}\na,seawater,,,1,mpy,,50,50,\n");
        let opts = IngestOptions {
            basis: Basis::Weight,
            ..IngestOptions::default()
        };
        let r = parse_csv_str(&text, &opts).unwrap();
        let c = &r.dataset.samples()[0].composition;
        assert_eq!(c.basis(), Basis::Atomic);
        assert!((c.get(Element::AL) - 47.39).abs() < 0.01);
    }

    #[test]
    fn strict_floor() {
        let text = format!("{HEADER}\na,seawater,,,1,mpy,,80,5,\n");
        let mut opts = IngestOptions::default();
        assert!(parse_csv_str(&text, &opts).is_ok());
        opts.strict_floor = Some(95.0);
        assert!(parse_csv_str(&text, &opts).is_err());
    }

    #[test]
    fn query_rows_need_no_rate() {
        let text = "id,env,temp_c,duration_days,Al,Mg\nq1,seawater,20,,90,10\n";
        let q = parse_query_csv_str(text, &IngestOptions::default()).unwrap();
        assert_eq!(q[0].rate, None);
        assert_eq!(q[0].temperature, Some(20.0));
    }

    #[test]
    fn crlf_line_numbers() {
        let text = "id,env,temp_c,duration_days,rate,rate_unit,grade,Al\r\n\
                    s1,seawater,,,1,mpy,,90\r\ns2,seawater,,,1,furlongs,,90\r\n";
        let rows = row_errors(parse_csv_str(text, &IngestOptions::default()).unwrap_err());
        assert_eq!(rows[0].line, 3);
    }

    #[test]
    fn written_csv_parses_back_identically() {
        let d = crate::dataset::generate_synthetic(40, 3, 0.2).unwrap();
        let back = parse_csv_str(&write_csv(&d), &IngestOptions::default()).unwrap();
        assert_eq!(back.dataset, d);
        assert!(back.notes.is_empty());
    }

    #[test]
    fn ragged_rows_are_reported() {
        let rows = row_errors(parse(&["a,seawater,,,1,mpy,,95"]).unwrap_err());
        assert_eq!(rows.len(), 1);
    }
}
