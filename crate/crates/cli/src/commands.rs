use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use corrml::dataset::{
    generate_synthetic_with, parse_csv, parse_query_csv_str, summarize, write_csv, Dataset, SyntheticConfig,
};
use corrml::evaluation::{compare_forward_models, train_cell, ComparisonReport};
use corrml::forward::{ForwardError, ForwardKind, TrainedForward};
use corrml::inverse::{fit_inverse, predictions_csv, InverseEnsemble, InverseError, InverseQuery};
use corrml::preprocess::{columns_for, feature_row, split_train_test, FeatureMatrix, PreprocessMetadata};

use crate::config::{Direction, RunConfig};
use crate::svg::{self, Series};
use crate::{Command, Common, DataArgs, Failure};

type Outcome = Result<(), Failure>;

fn training<E: Into<anyhow::Error>>(what: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Training(e.into().context(what))
}

fn invalid<E: Into<anyhow::Error>>(what: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Invalid(e.into().context(what))
}

/// Loads the config and applies the flags shared by every command.
fn resolve(common: &Common, data: Option<&DataArgs>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(path) = data.and_then(|d| d.data.clone()) {
        cfg.dataset.path = path;
    }
    cfg.protocol.seed = cfg.seed;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn prepare(cfg: &RunConfig, command: &str) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let text = format!(
        "# Resolved configuration of `corrml {command}`.\n\
         # Re-run with: corrml {command} --config <this file>\n\n{}",
        cfg.to_toml()
    );
    write(&cfg.out_dir, &format!("{command}.resolved.toml"), &text)
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = &cfg.dataset.path;
    if path.extension().is_some_and(|e| e == "json") {
        let d = Dataset::from_json(&read(path)?).with_context(|| format!("invalid dataset file {}", path.display()))?;
        if d.environments() != &cfg.dataset.environments {
            return Err(anyhow!(
                "{} was ingested with environments {:?}, but the config lists {:?}",
                path.display(),
                d.environments().labels(),
                cfg.dataset.environments.labels()
            ));
        }
        Ok(d)
    } else {
        let report = parse_csv(path, &cfg.dataset.ingest_options()).with_context(|| format!("invalid dataset {}", path.display()))?;
        Ok(report.dataset)
    }
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Generate { common, n, noise } => {
            let mut cfg = resolve(&common, None)?;
            cfg.generate.n = n.unwrap_or(cfg.generate.n);
            cfg.generate.noise = noise.unwrap_or(cfg.generate.noise);
            generate(&cfg)
        }
        Command::Ingest { common, input, units, grade_map } => {
            let mut cfg = resolve(&common, None)?;
            if let Some(input) = input {
                cfg.dataset.path = input;
            }
            cfg.dataset.units = units.unwrap_or(cfg.dataset.units);
            cfg.dataset.grade_map = grade_map.unwrap_or(cfg.dataset.grade_map);
            ingest(&cfg)
        }
        Command::TrainForward { common, data, model, features } => {
            let mut cfg = resolve(&common, Some(&data))?;
            cfg.model = model.unwrap_or(cfg.model);
            cfg.features = features.unwrap_or(cfg.features);
            train_forward(&cfg)
        }
        Command::Compare { common, data } => compare(&resolve(&common, Some(&data))?),
        Command::TrainInverse { common, data } => train_inverse(&resolve(&common, Some(&data))?),
        Command::Predict { common, direction, model, input } => {
            let mut cfg = resolve(&common, None)?;
            cfg.predict.direction = direction.unwrap_or(cfg.predict.direction);
            cfg.predict.model = model.unwrap_or(cfg.predict.model);
            cfg.predict.input = input.unwrap_or(cfg.predict.input);
            predict(&cfg)
        }
        Command::Report { common, input } => {
            let mut cfg = resolve(&common, None)?;
            cfg.report.input = input.unwrap_or(cfg.report.input);
            report(&cfg)
        }
    }
}

fn generate(cfg: &RunConfig) -> Outcome {
    let synth = SyntheticConfig {
        noise: cfg.generate.noise,
        environments: cfg.dataset.environments.clone(),
        ..SyntheticConfig::default()
    };
    let d = generate_synthetic_with(cfg.generate.n, cfg.seed, &synth).map_err(invalid("cannot generate dataset"))?;
    prepare(cfg, "generate")?;
    write(&cfg.out_dir, "dataset.csv", &write_csv(&d))?;
    Ok(())
}

fn ingest(cfg: &RunConfig) -> Outcome {
    let path = &cfg.dataset.path;
    let report = parse_csv(path, &cfg.dataset.ingest_options())
        .map_err(|e| Failure::Invalid(anyhow!(e).context(format!("cannot ingest {}", path.display()))))?;
    prepare(cfg, "ingest")?;
    write(&cfg.out_dir, "dataset.json", &report.dataset.to_json())?;
    write(&cfg.out_dir, "summary.txt", &summarize(&report.dataset).to_string())?;
    let notes: String = report.notes.iter().map(|n| format!("{n}\n")).collect();
    write(&cfg.out_dir, "notes.txt", &notes)?;
    Ok(())
}

fn cell_stem(kind: ForwardKind, set: corrml::preprocess::FeatureSet) -> String {
    format!("{kind}_{}", set.name().replace('+', "_"))
}

fn train_forward(cfg: &RunConfig) -> Outcome {
    let d = load_dataset(cfg)?;
    prepare(cfg, "train-forward")?;
    let (cell, model) =
        train_cell(&d, cfg.model, cfg.features, &cfg.forward, &cfg.protocol).map_err(training("forward training failed"))?;

    let metadata = PreprocessMetadata {
        feature_set: cfg.features,
        columns: columns_for(cfg.features, d.environments()),
        environments: d.environments().clone(),
        scaler_variance: "population".into(),
        scaler: model.scaler.clone(),
        cap_mode: cfg.protocol.cap_mode,
        cap_threshold: cfg.protocol.cap_threshold,
        split_seed: cfg.protocol.seed,
        test_fraction: cfg.protocol.test_fraction,
        log_shift: (cfg.model == ForwardKind::LogGpr).then_some(cfg.forward.loggpr.shift),
    };
    let out = &cfg.out_dir;
    write(out, "model.json", &model.to_json())?;
    write(out, "metadata.json", &to_json(&metadata))?;
    let stem = cell_stem(cell.model, cell.feature_set);
    let points: Vec<(f64, f64)> = cell.pairs.iter().map(|p| (p.truth, p.predicted)).collect();
    let title = format!("{} on {}", cell.model, cell.feature_set.name());
    write(out, &format!("scatter_{stem}.svg"), &svg::scatter(&title, &points))?;
    write(out, &cell.pairs_file_name(), &cell.pairs_csv())?;
    write(out, "metrics.csv", &ComparisonReport { cells: vec![cell] }.metrics_csv())?;
    Ok(())
}

fn compare(cfg: &RunConfig) -> Outcome {
    let d = load_dataset(cfg)?;
    prepare(cfg, "compare")?;
    let report = compare_forward_models(&d, &cfg.compare.features, &cfg.compare.models, &cfg.forward, &cfg.protocol)
        .map_err(training("forward comparison failed"))?;
    for cell in &report.cells {
        write(&cfg.out_dir, &cell.pairs_file_name(), &cell.pairs_csv())?;
    }
    write(&cfg.out_dir, "metrics.csv", &report.metrics_csv())?;
    Ok(())
}

fn train_inverse(cfg: &RunConfig) -> Outcome {
    let d = load_dataset(cfg)?;
    prepare(cfg, "train-inverse")?;
    let split = split_train_test(d.len(), cfg.seed, cfg.protocol.test_fraction).map_err(invalid("cannot split dataset"))?;
    let ensemble =
        fit_inverse(&d.subset(&split.train), cfg.seed, &cfg.inverse).map_err(training("inverse training failed"))?;
    let report = ensemble.evaluate(&d.subset(&split.test)).map_err(training("inverse evaluation failed"))?;
    write(&cfg.out_dir, "ensemble.json", &to_json(&ensemble))?;
    write(&cfg.out_dir, "inverse_elements.csv", &report.elements_csv())?;
    write(&cfg.out_dir, "inverse_feature_sets.csv", &report.feature_sets_csv())?;
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes to JSON")
}

fn predict(cfg: &RunConfig) -> Outcome {
    let p = &cfg.predict;
    let queries = parse_query_csv_str(&read(&p.input)?, &cfg.dataset.ingest_options())
        .map_err(|e| Failure::Invalid(anyhow!(e).context(format!("invalid query file {}", p.input.display()))))?;
    let model_text = read(&p.model)?;
    let csv = match p.direction {
        Direction::Forward => {
            let model = TrainedForward::from_json(&model_text)
                .with_context(|| format!("{} is not a forward model file", p.model.display()))?;
            let set = model.feature_set;
            let infos = columns_for(set, &cfg.dataset.environments);
            let columns: Vec<String> = infos.iter().map(|c| c.name.clone()).collect();
            model.check_columns(&columns).map_err(invalid("query schema does not match the model"))?;
            let mut rows = Vec::with_capacity(queries.len());
            for q in &queries {
                let row = feature_row(set, &q.composition, q.environment, q.temperature, q.duration).ok_or_else(|| {
                    anyhow!("query `{}` lacks a field the `{}` feature set needs", q.id, set.name())
                })?;
                rows.push(row);
            }
            let ids = queries.iter().map(|q| q.id.clone()).collect();
            let x = FeatureMatrix::from_rows(&rows, infos, ids).values;
            let pred = model.predict(&x).map_err(|e| match e {
                ForwardError::Schema { .. } | ForwardError::Preprocess(_) => Failure::Invalid(e.into()),
                other => Failure::Training(anyhow!(other).context("prediction failed")),
            })?;
            let mut s = String::from("query_id,predicted_rate_mpy\n");
            for (q, v) in queries.iter().zip(pred) {
                let _ = writeln!(s, "{},{v}", csv_field(&q.id));
            }
            s
        }
        Direction::Inverse => {
            let ensemble: InverseEnsemble = serde_json::from_str(&model_text)
                .with_context(|| format!("{} is not an inverse ensemble file", p.model.display()))?;
            let queries: Vec<InverseQuery> = queries.iter().map(InverseQuery::from).collect();
            let preds = ensemble.predict(&queries).map_err(|e| match e {
                InverseError::MissingRate(_) | InverseError::Malformed(_) => Failure::Invalid(e.into()),
                other => Failure::Training(anyhow!(other).context("prediction failed")),
            })?;
            predictions_csv(ensemble.targets(), &preds)
        }
    };
    prepare(cfg, "predict")?;
    write(&cfg.out_dir, "predictions.csv", &csv)?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rows of a CSV file as header-keyed maps.
fn read_table(path: &Path) -> anyhow::Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?.clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("malformed CSV {}", path.display()))?;
        rows.push(header.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(rows)
}

fn field<'a>(row: &'a BTreeMap<String, String>, name: &str, path: &Path) -> anyhow::Result<&'a str> {
    row.get(name).map(String::as_str).ok_or_else(|| anyhow!("{} has no `{name}` column", path.display()))
}

fn number(row: &BTreeMap<String, String>, name: &str, path: &Path) -> anyhow::Result<Option<f64>> {
    let v = field(row, name, path)?;
    if v.is_empty() {
        return Ok(None);
    }
    v.parse().map(Some).with_context(|| format!("{}: `{name}` value `{v}` is not a number", path.display()))
}

/// Bar charts of `metrics` grouped by `group` with one series per `series`,
/// both in order of first appearance.
fn grouped_charts(
    rows: &[BTreeMap<String, String>],
    path: &Path,
    group: &str,
    series: &str,
    metrics: &[(&str, &str)],
    title: &str,
) -> anyhow::Result<Vec<(String, String)>> {
    let mut groups: Vec<String> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for row in rows {
        for (col, list) in [(group, &mut groups), (series, &mut names)] {
            let v = field(row, col, path)?.to_string();
            if !list.contains(&v) {
                list.push(v);
            }
        }
    }
    let mut charts = Vec::new();
    for &(metric, label) in metrics {
        let mut table: Vec<Series> =
            names.iter().map(|n| Series { name: n.clone(), values: vec![None; groups.len()] }).collect();
        for row in rows {
            let g = groups.iter().position(|x| x == field(row, group, path).unwrap()).unwrap();
            let s = names.iter().position(|x| x == field(row, series, path).unwrap()).unwrap();
            table[s].values[g] = number(row, metric, path)?;
        }
        charts.push((metric.to_string(), svg::bar_chart(&format!("{title}: {label}"), label, &groups, &table)));
    }
    Ok(charts)
}

fn report(cfg: &RunConfig) -> Outcome {
    let dir = &cfg.report.input;
    let mut outputs: Vec<(String, String)> = Vec::new();

    let metrics = dir.join("metrics.csv");
    if metrics.exists() {
        let rows = read_table(&metrics)?;
        let charts = grouped_charts(
            &rows,
            &metrics,
            "model",
            "feature_set",
            &[("r2", "R²"), ("mae", "MAE (mpy)"), ("rmse", "RMSE (mpy)")],
            "Forward models",
        )?;
        outputs.extend(charts.into_iter().map(|(m, s)| (format!("{m}.svg"), s)));
    }

    let mut pairs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("pairs_") && name.ends_with(".csv")
        })
        .collect();
    pairs.sort();
    for path in &pairs {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").trim_start_matches("pairs_").to_string();
        let mut points = Vec::new();
        for row in read_table(path)? {
            let t = number(&row, "true", path)?.ok_or_else(|| anyhow!("{}: empty `true`", path.display()))?;
            let p = number(&row, "predicted", path)?.ok_or_else(|| anyhow!("{}: empty `predicted`", path.display()))?;
            points.push((t, p));
        }
        outputs.push((format!("scatter_{stem}.svg"), svg::scatter(&stem, &points)));
    }

    let elements = dir.join("inverse_elements.csv");
    if elements.exists() {
        let rows = read_table(&elements)?;
        let charts = grouped_charts(
            &rows,
            &elements,
            "element",
            "submodel_set",
            &[("r2", "R²"), ("rmse", "RMSE (at%)")],
            "Inverse model",
        )?;
        outputs.extend(charts.into_iter().map(|(m, s)| (format!("inverse_elements_{m}.svg"), s)));
    }
    let sets = dir.join("inverse_feature_sets.csv");
    if sets.exists() {
        let mut rows = read_table(&sets)?;
        for r in &mut rows {
            r.insert("series".into(), "score".into());
        }
        let charts = grouped_charts(
            &rows,
            &sets,
            "submodel_set",
            "series",
            &[("mean_r2", "mean R²"), ("pooled_rmse", "pooled RMSE (at%)")],
            "Inverse feature sets",
        )?;
        outputs.extend(charts.into_iter().map(|(m, s)| (format!("inverse_feature_sets_{m}.svg"), s)));
    }

    if outputs.is_empty() {
        return Err(Failure::Invalid(anyhow!("no report CSVs found in {}", dir.display())));
    }
    prepare(cfg, "report")?;
    for (name, svg) in &outputs {
        write(&cfg.out_dir, name, svg)?;
    }
    Ok(())
}
