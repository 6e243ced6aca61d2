//! Random-forest classifier used as the black-box risk model.
//!
//! Each tree sees a bootstrap sample drawn with its own seed
//! (`config.seed + tree index`), so training parallelizes across trees
//! without changing the result.

mod tree;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use tree::{grow_tree, GrowParams};
pub use tree::{DecisionTree, Node};

use crate::dataset::TabularDataset;
use crate::explain::BlackBox;
use crate::CLASS_THRESHOLD;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("gini impurity of an empty label set")]
    EmptyInput,
    #[error("training data contains a single class")]
    SingleClassTraining,
    #[error("need at least {needed} training samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means ⌈√d⌉.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_leaf: 5,
            max_depth: None,
            mtry: None,
            seed: 42,
        }
    }
}

fn ceil_sqrt(d: usize) -> usize {
    let mut m = (d as f64).sqrt() as usize;
    while m * m < d {
        m += 1;
    }
    while m > 1 && (m - 1) * (m - 1) >= d {
        m -= 1;
    }
    m.max(1)
}

impl ForestConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| ceil_sqrt(n_features))
    }

    fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_leaf must be >= 1".into()));
        }
        let mtry = self.resolved_mtry(n_features);
        if mtry == 0 || mtry > n_features {
            return Err(ForestError::InvalidConfig(format!(
                "mtry must lie in [1, {n_features}], got {mtry}"
            )));
        }
        Ok(())
    }
}

/// `1 − p₀² − p₁²` over a binary label multiset.
pub fn gini_impurity(labels: &[u8]) -> Result<f64, ForestError> {
    if labels.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(tree::gini_from_counts(pos, labels.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree>,
    pub oob_accuracy: f64,
}

pub fn train_forest(
    train: &TabularDataset,
    config: &ForestConfig,
) -> Result<ForestModel, ForestError> {
    let d = train.n_features();
    config.validate(d)?;
    let (defective, clean) = train.label_counts();
    if defective == 0 || clean == 0 {
        return Err(ForestError::SingleClassTraining);
    }
    let n = train.len();
    if n < 2 * config.min_leaf {
        return Err(ForestError::TooFewSamples {
            needed: 2 * config.min_leaf,
            got: n,
        });
    }

    let rows = train.rows();
    let labels = train.labels();
    let params = tree::GrowParams {
        min_leaf: config.min_leaf,
        max_depth: config.max_depth,
        mtry: config.resolved_mtry(d),
    };

    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
            let mut in_bag = vec![false; n];
            let samples: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let tree = tree::grow_tree(&rows, &labels, samples, params, &mut rng);
            (tree, in_bag)
        })
        .collect();

    let mut correct = 0usize;
    let mut counted = 0usize;
    for i in 0..n {
        let (sum, votes) = grown
            .iter()
            .filter(|(_, in_bag)| !in_bag[i])
            .fold((0.0, 0usize), |(s, c), (t, _)| {
                (s + t.predict(rows[i]), c + 1)
            });
        if votes == 0 {
            continue;
        }
        counted += 1;
        let predicted = u8::from(sum / votes as f64 >= CLASS_THRESHOLD);
        if predicted == labels[i] {
            correct += 1;
        }
    }
    let oob_accuracy = if counted == 0 {
        0.0
    } else {
        correct as f64 / counted as f64
    };

    let mut resolved = config.clone();
    resolved.mtry = Some(params.mtry);
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_names: train.feature_names.clone(),
        config: resolved,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy,
    })
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean leaf defective fraction across trees.
    pub fn predict_risk(&self, features: &[f64]) -> Result<f64, ForestError> {
        if features.len() != self.n_features() {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        Ok(self.score_unchecked(features))
    }

    fn score_unchecked(&self, features: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        total / self.trees.len() as f64
    }

    /// Impurity-decrease importance, normalized to sum to 1. A forest with no
    /// splits at all reports zero for every feature.
    pub fn global_importance(&self) -> BTreeMap<String, f64> {
        let mut totals = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split {
                    feature,
                    impurity_decrease,
                    ..
                } = node
                {
                    totals[*feature] += impurity_decrease;
                }
            }
        }
        let sum: f64 = totals.iter().sum();
        self.feature_names
            .iter()
            .zip(totals)
            .map(|(name, v)| (name.clone(), if sum > 0.0 { v / sum } else { 0.0 }))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::UnsupportedVersion(model.format_version));
        }
        if model.trees.is_empty() {
            return Err(ForestError::MalformedModel("no trees".into()));
        }
        let d = model.n_features();
        for (t, tree) in model.trees.iter().enumerate() {
            if tree.max_feature_index().is_some_and(|f| f >= d) {
                return Err(ForestError::MalformedModel(format!(
                    "tree {t} references a feature index >= {d}"
                )));
            }
            let n = tree.nodes.len();
            let bad_child = tree.nodes.iter().enumerate().any(|(i, node)| match node {
                Node::Split { left, right, .. } => {
                    *left <= i || *right <= i || *left >= n || *right >= n
                }
                Node::Leaf { .. } => false,
            });
            if n == 0 || bad_child {
                return Err(ForestError::MalformedModel(format!(
                    "tree {t} has invalid node links"
                )));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl BlackBox for ForestModel {
    fn score(&self, features: &[f64]) -> f64 {
        assert_eq!(features.len(), self.n_features(), "feature vector length");
        self.score_unchecked(features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MetricRecord;

    fn leaf(fraction: f64) -> DecisionTree {
        DecisionTree {
            nodes: vec![Node::Leaf {
                defective_fraction: fraction,
                samples: 10,
            }],
        }
    }

    fn stump(feature: usize, threshold: f64, lo: f64, hi: f64) -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                    impurity_decrease: 3.0,
                },
                Node::Leaf {
                    defective_fraction: lo,
                    samples: 5,
                },
                Node::Leaf {
                    defective_fraction: hi,
                    samples: 5,
                },
            ],
        }
    }

    fn model(trees: Vec<DecisionTree>, names: &[&str]) -> ForestModel {
        ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            config: ForestConfig::default(),
            trees,
            oob_accuracy: 1.0,
        }
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[1, 1, 1]).unwrap(), 0.0);
        assert_eq!(gini_impurity(&[0, 1]).unwrap(), 0.5);
        assert!((gini_impurity(&[1, 1, 1, 0]).unwrap() - 0.375).abs() < 1e-15);
        assert!(matches!(gini_impurity(&[]), Err(ForestError::EmptyInput)));
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let m = model(vec![leaf(1.0)], &["a"]);
        assert_eq!(m.predict_risk(&[123.0]).unwrap(), 1.0);
        let m = model(vec![leaf(0.4), leaf(0.8)], &["a"]);
        assert!((m.predict_risk(&[0.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            m.predict_risk(&[0.0, 1.0]),
            Err(ForestError::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn stump_importance_is_all_on_one_feature() {
        let m = model(
            vec![stump(0, 0.5, 0.0, 1.0), stump(0, 0.7, 0.1, 0.9)],
            &["a", "b", "c"],
        );
        let imp = m.global_importance();
        assert_eq!(imp["a"], 1.0);
        assert_eq!(imp["b"], 0.0);
        assert_eq!(imp["c"], 0.0);
    }

    #[test]
    fn single_class_and_small_inputs_rejected() {
        let records: Vec<MetricRecord> = (0..20)
            .map(|i| MetricRecord {
                file_id: i.to_string(),
                features: vec![i as f64],
                label: 1,
            })
            .collect();
        let ds = TabularDataset::new(vec!["x".into()], records).unwrap();
        assert!(matches!(
            train_forest(&ds, &ForestConfig::default()),
            Err(ForestError::SingleClassTraining)
        ));
        let mut small = ds.clone();
        small.records.truncate(6);
        small.records[0].label = 0;
        assert!(matches!(
            train_forest(&small, &ForestConfig::default()),
            Err(ForestError::TooFewSamples { needed: 10, got: 6 })
        ));
    }

    #[test]
    fn mtry_defaults_to_ceil_sqrt() {
        assert_eq!(ceil_sqrt(1), 1);
        assert_eq!(ceil_sqrt(2), 2);
        assert_eq!(ceil_sqrt(4), 2);
        assert_eq!(ceil_sqrt(5), 3);
        assert_eq!(ceil_sqrt(100), 10);
        assert_eq!(ceil_sqrt(101), 11);
    }

    #[test]
    fn rejects_out_of_range_mtry() {
        let cfg = ForestConfig {
            mtry: Some(3),
            ..ForestConfig::default()
        };
        assert!(matches!(
            cfg.validate(2),
            Err(ForestError::InvalidConfig(_))
        ));
    }

    #[test]
    fn loading_rejects_bad_feature_index() {
        let m = model(vec![stump(4, 0.5, 0.0, 1.0)], &["a"]);
        assert!(matches!(
            ForestModel::from_json(&m.to_json()),
            Err(ForestError::MalformedModel(_))
        ));
    }
}
