//! Fuzz harness bodies, one per decoder. Each decodes arbitrary bytes and,
//! when decoding succeeds, uses the result: a decoder that accepts a value
//! must hand back something that predicts or re-encodes without panicking.
//! Each returns whether the input was accepted.
//!
//! The `fuzz_targets/` binaries are thin wrappers; `cargo test` in this
//! directory replays the checked-in corpus through the same functions.

use std::str::FromStr;

use corrml::dataset::{
    parse_csv_str, parse_query_csv_str, write_csv, Basis, Composition, Dataset, GradeMap, IngestOptions,
};
use corrml::forward::TrainedForward;
use corrml::gpr::{GprModel, GprModelFile};
use corrml::inverse::{InverseEnsemble, InverseQuery};
use corrml::kernels::KernelSpec;
use corrml::neural::DenseNetwork;
use corrml::trees::{DecisionTree, GradientBoostedTrees, MultiOutputModel, RandomForest};
use corrml::Element;
use corrml_cli::config::RunConfig;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;

/// Widths above this are skipped rather than allocated.
const MAX_WIDTH: usize = 4096;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

fn json<T: DeserializeOwned>(data: &[u8]) -> Option<T> {
    serde_json::from_slice(data).ok()
}

/// A few rows of plausible, varied inputs.
fn probe(cols: usize) -> Option<DMatrix<f64>> {
    (cols <= MAX_WIDTH).then(|| DMatrix::from_fn(3, cols, |i, j| (i as f64 - 1.0) * (1.0 + j as f64 * 0.37)))
}

/// The first byte picks the options; the rest is the file.
pub fn csv_ingest(data: &[u8]) -> bool {
    let Some((&flags, rest)) = data.split_first() else { return false };
    let Some(s) = text(rest) else { return false };
    let opts = IngestOptions {
        basis: if flags & 1 == 0 { Basis::Atomic } else { Basis::Weight },
        strict_floor: (flags & 2 != 0).then_some(95.0),
        ..IngestOptions::default()
    };
    let Ok(report) = parse_csv_str(s, &opts) else { return false };
    let again = parse_csv_str(&write_csv(&report.dataset), &IngestOptions::default()).expect("written dataset parses");
    assert_eq!(again.dataset, report.dataset);
    true
}

pub fn query_csv(data: &[u8]) -> bool {
    text(data).is_some_and(|s| parse_query_csv_str(s, &IngestOptions::default()).is_ok())
}

pub fn grade_map(data: &[u8]) -> bool {
    let Some(m) = text(data).and_then(|s| GradeMap::from_str(s).ok()) else { return false };
    assert_eq!(GradeMap::from_str(&m.to_string()).expect("display parses"), m);
    true
}

pub fn dataset_json(data: &[u8]) -> bool {
    let Some(d) = text(data).and_then(|s| Dataset::from_json(s).ok()) else { return false };
    assert_eq!(Dataset::from_json(&d.to_json()).expect("re-encoded dataset parses"), d);
    true
}

pub fn kernel_spec(data: &[u8]) -> bool {
    let Some(k) = json::<KernelSpec>(data) else { return false };
    let back: KernelSpec = serde_json::from_str(&serde_json::to_string(&k).unwrap()).expect("re-encoded kernel parses");
    assert_eq!(back, k);
    if let Some(x) = probe(k.dim()) {
        let _ = k.gram_sym(&x);
    }
    true
}

pub fn forward_model(data: &[u8]) -> bool {
    let Some(m) = text(data).and_then(|s| TrainedForward::from_json(s).ok()) else { return false };
    if let Some(x) = probe(m.columns.len()) {
        let _ = m.predict(&x);
    }
    TrainedForward::from_json(&m.to_json()).expect("re-encoded model parses");
    true
}

/// The first byte picks the tree family.
pub fn tree_model(data: &[u8]) -> bool {
    let Some((&which, rest)) = data.split_first() else { return false };
    match which % 4 {
        0 => json::<DecisionTree>(rest).map(|t| probe(t.n_features()).map(|x| t.predict(&x))).is_some(),
        1 => json::<RandomForest>(rest).map(|f| probe(f.n_features()).map(|x| f.predict(&x))).is_some(),
        2 => json::<GradientBoostedTrees>(rest).map(|g| probe(g.n_features()).map(|x| g.predict(&x))).is_some(),
        _ => json::<MultiOutputModel>(rest).map(|m| probe(m.n_features()).map(|x| m.predict(&x))).is_some(),
    }
}

pub fn network(data: &[u8]) -> bool {
    json::<DenseNetwork>(data).map(|n| probe(n.input_dim()).map(|x| n.forward_batch(&x))).is_some()
}

pub fn gpr_model(data: &[u8]) -> bool {
    let Some(m) = json::<GprModelFile>(data).and_then(|f| GprModel::from_file(f).ok()) else { return false };
    probe(m.n_features()).map(|x| m.predict(&x));
    true
}

pub fn inverse_ensemble(data: &[u8]) -> bool {
    let Some(e) = json::<InverseEnsemble>(data) else { return false };
    let composition = Composition::from_entries(Basis::Atomic, [(Element::AL, 90.0), (Element::MG, 10.0)]).unwrap();
    let queries: Vec<InverseQuery> = (0..3u8)
        .map(|i| InverseQuery {
            id: format!("q{i}"),
            rate: Some(1.0 + f64::from(i)),
            environment: i,
            composition: composition.clone(),
            temperature: (i > 0).then_some(25.0),
            duration: (i > 1).then_some(30.0),
        })
        .collect();
    let _ = e.predict(&queries);
    true
}

pub fn run_config(data: &[u8]) -> bool {
    let Some(c) = text(data).and_then(|s| RunConfig::parse(s).ok()) else { return false };
    assert_eq!(RunConfig::parse(&c.to_toml()).expect("resolved config parses"), c);
    true
}
