//! CART regression trees and the ensembles built from them.
//!
//! Splits minimize the summed squared error of the two children, with
//! thresholds at midpoints between consecutive distinct values; a sample goes
//! left when `x[feature] <= threshold`. Equal-gain candidates resolve to the
//! lowest feature index, then the lowest threshold.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

mod boost;
mod forest;
mod multi;

pub use boost::{fit_gbm, GbmConfig, GradientBoostedTrees};
pub use forest::{bootstrap_indices, fit_forest, tree_seeds, ForestConfig, RandomForest};
pub use multi::{fit_multi_output, MultiOutputModel, TreeModel, TreeModelConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("no training rows")]
    Empty,
    #[error("{rows} input rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("query has {got} features, model was trained on {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("malformed model: {0}")]
    Malformed(String),
}

/// How many features each split may consider.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MaxFeatures {
    #[default]
    All,
    Sqrt,
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Third => d / 3,
            MaxFeatures::Count(c) => c,
        };
        k.clamp(1, d.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaxFeatures::All => f.write_str("all"),
            MaxFeatures::Sqrt => f.write_str("sqrt"),
            MaxFeatures::Third => f.write_str("1/3"),
            MaxFeatures::Count(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for MaxFeatures {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, TreeError> {
        match s.trim() {
            "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "1/3" | "third" => Ok(MaxFeatures::Third),
            t => match t.parse::<usize>() {
                Ok(c) if c > 0 => Ok(MaxFeatures::Count(c)),
                _ => Err(TreeError::BadConfig(format!("max_features {s:?}: expected all, sqrt, 1/3 or a positive count"))),
            },
        }
    }
}

impl Serialize for MaxFeatures {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(c) => c.to_string().parse(),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Serde for optional depths: a number, or `"none"` for unlimited. Spelled
/// out rather than omitted so configs that default to a finite depth survive
/// a round trip through formats without a null.
pub(crate) mod depth {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_u64(*d as u64),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Depth(usize),
            Text(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Depth(v) => Ok(Some(v)),
            Raw::Text(t) if t == "none" => Ok(None),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad depth `{t}`"))),
            Raw::Null(()) => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeLimits {
    /// `None` grows until leaves are pure or too small to split.
    #[serde(with = "depth")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { max_depth: None, min_samples_leaf: 1 }
    }
}

impl TreeLimits {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_samples_leaf == 0 {
            return Err(TreeError::BadConfig("min_samples_leaf must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Squared-error reduction achieved by this split.
        gain: f64,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// Node arena; `nodes[0]` is the root and children always follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeFile")]
pub struct DecisionTree {
    n_features: usize,
    nodes: Vec<Node>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    n_features: usize,
    nodes: Vec<Node>,
}

impl TryFrom<TreeFile> for DecisionTree {
    type Error = TreeError;

    fn try_from(f: TreeFile) -> Result<Self, TreeError> {
        let bad = |m: String| Err(TreeError::Malformed(m));
        if f.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let mut parents = vec![0usize; f.nodes.len()];
        for (i, node) in f.nodes.iter().enumerate() {
            match *node {
                Node::Split { feature, threshold, left, right, gain } => {
                    if feature >= f.n_features {
                        return bad(format!("node {i}: feature {feature} out of range"));
                    }
                    if !threshold.is_finite() || !gain.is_finite() {
                        return bad(format!("node {i}: non-finite split"));
                    }
                    for c in [left, right] {
                        if c <= i || c >= f.nodes.len() {
                            return bad(format!("node {i}: child {c} out of order"));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { value, .. } => {
                    if !value.is_finite() {
                        return bad(format!("node {i}: non-finite leaf"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return bad("every non-root node must have exactly one parent".into());
        }
        Ok(DecisionTree { n_features: f.n_features, nodes: f.nodes })
    }
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, TreeError> {
        check_width(x, self.n_features)?;
        Ok(rows(x).map(|r| self.predict_row(&r)).collect())
    }

    /// Total split gain per feature (unnormalized).
    pub fn gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_features];
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                g[*feature] += gain.max(0.0);
            }
        }
        g
    }
}

pub(crate) fn rows(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.row_iter().map(|r| r.iter().copied().collect())
}

pub(crate) fn check_width(x: &DMatrix<f64>, expected: usize) -> Result<(), TreeError> {
    if x.ncols() != expected {
        return Err(TreeError::DimensionMismatch { expected, got: x.ncols() });
    }
    Ok(())
}

pub(crate) fn check_training(x: &DMatrix<f64>, y: &[f64]) -> Result<(), TreeError> {
    if x.nrows() != y.len() {
        return Err(TreeError::LengthMismatch { rows: x.nrows(), targets: y.len() });
    }
    if y.is_empty() || x.ncols() == 0 {
        return Err(TreeError::Empty);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite);
    }
    Ok(())
}

/// Fits one tree on all rows and all features.
pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], limits: &TreeLimits) -> Result<DecisionTree, TreeError> {
    check_training(x, y)?;
    limits.validate()?;
    Ok(grow(x, y, (0..y.len()).collect(), limits, None))
}

/// Per-split feature subsampling: draw `k` of the features from `rng`.
pub(crate) struct FeatureSampler<'a> {
    pub k: usize,
    pub rng: &'a mut ChaCha8Rng,
}

/// Grows a tree on `idx` (which may repeat rows).
pub(crate) fn grow(
    x: &DMatrix<f64>,
    y: &[f64],
    idx: Vec<usize>,
    limits: &TreeLimits,
    mut sampler: Option<FeatureSampler<'_>>,
) -> DecisionTree {
    let mut nodes = Vec::new();
    let mut builder = Builder { x, y, limits, nodes: &mut nodes, sampler: sampler.as_mut() };
    builder.build(idx, 0);
    DecisionTree { n_features: x.ncols(), nodes }
}

struct Builder<'a, 'r, 's> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    limits: &'a TreeLimits,
    nodes: &'a mut Vec<Node>,
    sampler: Option<&'s mut FeatureSampler<'r>>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_, '_, '_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let me = self.nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value: mean, samples: idx.len() });

        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let depth_ok = self.limits.max_depth.map_or(true, |m| depth < m);
        if pure || !depth_ok || idx.len() < 2 * self.limits.min_samples_leaf {
            return me;
        }
        let Some(best) = self.best_split(&idx) else {
            return me;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x[(i, best.feature)] <= best.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[me] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: r, gain: best.gain };
        me
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.ncols();
        match self.sampler.as_mut() {
            Some(s) if s.k < d => {
                let mut chosen = sample(&mut *s.rng, d, s.k).into_vec();
                chosen.sort_unstable();
                // features not drawn, tried only if no drawn feature can split
                let mut rest: Vec<usize> = (0..d).filter(|f| !chosen.contains(f)).collect();
                chosen.append(&mut rest);
                chosen
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let d = self.x.ncols();
        let k = self.sampler.as_ref().map_or(d, |s| s.k.min(d));
        let order = self.candidate_features();
        let mut best: Option<Candidate> = None;
        for (rank, &f) in order.iter().enumerate() {
            if rank >= k && best.is_some() {
                break;
            }
            if let Some(c) = self.best_split_on(idx, f) {
                let better = match &best {
                    None => true,
                    Some(b) => c.gain > b.gain || (c.gain == b.gain && c.feature < b.feature),
                };
                if better {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_split_on(&self, idx: &[usize], f: usize) -> Option<Candidate> {
        let mut pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (self.x[(i, f)], self.y[i])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let n = pairs.len();
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let base = total * total / n as f64;
        let min_leaf = self.limits.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            let n_left = i + 1;
            if a == b || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            // SSE(parent) − SSE(left) − SSE(right)
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (n - n_left) as f64 - base;
            if best.as_ref().map_or(true, |c| gain > c.gain) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Candidate { feature: f, threshold, gain });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_split() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t = fit_tree(&x, &[0.0, 10.0], &TreeLimits { max_depth: Some(1), min_samples_leaf: 1 }).unwrap();
        assert_eq!(t.predict(&x).unwrap(), vec![0.0, 10.0]);
        assert!(matches!(t.nodes()[0], Node::Split { threshold, .. } if threshold == 0.5));
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i * j) as f64);
        let t = fit_tree(&x, &[3.5; 5], &TreeLimits::default()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { value: 3.5, samples: 5 }]);
    }

    #[test]
    fn ties_pick_lowest_feature() {
        // both columns separate y identically
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let t = fit_tree(&x, &[0.0, 0.0, 1.0, 1.0], &TreeLimits::default()).unwrap();
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn zero_gain_split_still_taken_when_impure() {
        // XOR: no single split reduces error, but depth 2 fits exactly
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let y = [0.0, 1.0, 1.0, 0.0];
        let t = fit_tree(&x, &y, &TreeLimits::default()).unwrap();
        assert_eq!(t.predict(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let t = fit_tree(&x, &y, &TreeLimits { max_depth: None, min_samples_leaf: 3 }).unwrap();
        assert!(t.nodes().iter().all(|n| !matches!(n, Node::Leaf { samples, .. } if *samples < 3)));
    }

    #[test]
    fn max_features_tokens() {
        for s in ["all", "sqrt", "1/3", "7"] {
            assert_eq!(s.parse::<MaxFeatures>().unwrap().to_string(), s);
        }
        assert!("0".parse::<MaxFeatures>().is_err());
        assert_eq!(MaxFeatures::Sqrt.resolve(10), 3);
        assert_eq!(MaxFeatures::Third.resolve(2), 1);
        assert_eq!(MaxFeatures::Count(50).resolve(4), 4);
        let v: MaxFeatures = serde_json::from_str("3").unwrap();
        assert_eq!(v, MaxFeatures::Count(3));
    }

    #[test]
    fn serialization_round_trip_and_validation() {
        let x = DMatrix::from_fn(8, 2, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = fit_tree(&x, &y, &TreeLimits::default()).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<DecisionTree>(&s).unwrap(), t);

        let cyclic = r#"{"n_features":1,"nodes":[{"kind":"split","feature":0,"threshold":0.5,"left":0,"right":1,"gain":1.0},{"kind":"leaf","value":1.0,"samples":1}]}"#;
        assert!(serde_json::from_str::<DecisionTree>(cyclic).is_err());
        let shared = r#"{"n_features":1,"nodes":[{"kind":"split","feature":0,"threshold":0.5,"left":1,"right":1,"gain":1.0},{"kind":"leaf","value":1.0,"samples":1}]}"#;
        assert!(serde_json::from_str::<DecisionTree>(shared).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_element(2, 1, 0.0);
        assert_eq!(fit_tree(&x, &[1.0], &TreeLimits::default()), Err(TreeError::LengthMismatch { rows: 2, targets: 1 }));
        assert_eq!(fit_tree(&x, &[1.0, f64::NAN], &TreeLimits::default()), Err(TreeError::NonFinite));
        let t = fit_tree(&x, &[1.0, 2.0], &TreeLimits::default()).unwrap();
        assert!(t.predict(&DMatrix::from_element(1, 2, 0.0)).is_err());
    }
}
