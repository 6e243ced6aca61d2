//! Model-agnostic local explanations.
//!
//! Around one instance we draw perturbed neighbours in an interpretable
//! binary space `z` (quartile bins for metric rows, token presence for source
//! files), score them with the black box, weight them by proximity to the
//! instance and fit a sparse weighted ridge surrogate. The surrogate's
//! coefficients are the reported feature contributions.

mod discretize;
mod perturb;
mod surrogate;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discretize::{discretize_features, BinCondition, DiscretizationScheme};
pub use perturb::{perturb_tabular, perturb_tokens, TabularSample};
pub use surrogate::{fit_weighted_surrogate, kernel_weight, z_distance, SurrogateFit};

use crate::numfmt::round_sig;
use crate::tokenizer::TokenVector;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("need at least 4 training records to discretize, got {0}")]
    TooFewRecords(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("file has no tokens")]
    EmptyFile,
    #[error("kernel width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("samples, targets and weights differ in length")]
    LengthMismatch,
    #[error("weights must be non-negative with a positive sum")]
    BadWeights,
    #[error("ridge lambda must be non-negative, got {0}")]
    BadLambda(f64),
    #[error("surrogate normal equations are singular; use a positive ridge lambda")]
    SingularSystem,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid explainer config: {0}")]
    InvalidConfig(String),
}

/// Anything that maps a raw feature vector to a risk score in `[0,1]`.
pub trait BlackBox: Sync {
    fn score(&self, features: &[f64]) -> f64;
}

impl<F> BlackBox for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, features: &[f64]) -> f64 {
        self(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub top_k: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl ExplainerConfig {
    pub fn tabular(seed: u64) -> Self {
        Self {
            n_samples: 5000,
            kernel_width: 0.75,
            top_k: 10,
            ridge_lambda: 1.0,
            seed,
        }
    }

    pub fn tokens(seed: u64) -> Self {
        Self {
            top_k: 20,
            ..Self::tabular(seed)
        }
    }

    fn validate(&self) -> Result<(), ExplainError> {
        if self.n_samples < 10 {
            return Err(ExplainError::InvalidConfig(
                "n_samples must be >= 10".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(ExplainError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.kernel_width.is_nan() || self.kernel_width <= 0.0 {
            return Err(ExplainError::NonPositiveWidth(self.kernel_width));
        }
        if self.ridge_lambda.is_nan() || self.ridge_lambda < 0.0 {
            return Err(ExplainError::BadLambda(self.ridge_lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    SupportsDefective,
    SupportsClean,
}

impl Direction {
    pub fn of(weight: f64) -> Self {
        if weight > 0.0 {
            Self::SupportsDefective
        } else {
            Self::SupportsClean
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub feature: String,
    pub weight: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub file_id: String,
    pub risk_score: f64,
    pub intercept: f64,
    pub fidelity_r2: f64,
    pub contributions: Vec<FeatureContribution>,
    pub config: ExplainerConfig,
    pub seed: u64,
}

/// Digits kept for every real number in a serialized explanation.
pub const EXPLANATION_DIGITS: usize = 9;

impl Explanation {
    /// Assembles an explanation from raw surrogate output: drops exactly-zero
    /// coefficients, rounds to [`EXPLANATION_DIGITS`] and orders by |weight|
    /// (ties by feature name).
    pub fn new(
        file_id: impl Into<String>,
        risk_score: f64,
        fit: &SurrogateFit,
        feature_labels: &[String],
        config: &ExplainerConfig,
    ) -> Self {
        let mut contributions: Vec<FeatureContribution> = fit
            .selected
            .iter()
            .filter(|&&j| fit.coefficients[j] != 0.0)
            .map(|&j| {
                let weight = round_sig(fit.coefficients[j], EXPLANATION_DIGITS);
                FeatureContribution {
                    feature: feature_labels[j].clone(),
                    weight,
                    direction: Direction::of(weight),
                }
            })
            .collect();
        sort_contributions(&mut contributions);
        Self {
            file_id: file_id.into(),
            risk_score: round_sig(risk_score, EXPLANATION_DIGITS),
            intercept: round_sig(fit.intercept, EXPLANATION_DIGITS),
            fidelity_r2: round_sig(fit.fidelity_r2, EXPLANATION_DIGITS),
            contributions,
            config: config.clone(),
            seed: config.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explanation serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn supporting_defective(&self) -> impl Iterator<Item = &FeatureContribution> {
        self.contributions
            .iter()
            .filter(|c| c.direction == Direction::SupportsDefective)
    }

    pub fn supporting_clean(&self) -> impl Iterator<Item = &FeatureContribution> {
        self.contributions
            .iter()
            .filter(|c| c.direction == Direction::SupportsClean)
    }
}

pub fn sort_contributions(contributions: &mut [FeatureContribution]) {
    contributions.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then_with(|| a.feature.cmp(&b.feature))
    });
}

/// What is being explained and the context needed to perturb it.
#[derive(Debug, Clone, Copy)]
pub enum Instance<'a> {
    /// A metric row, perturbed through quartile bins.
    Tabular {
        values: &'a [f64],
        scheme: &'a DiscretizationScheme,
    },
    /// A source file's token counts; the black box takes count vectors over
    /// `vocabulary`.
    Tokens {
        tokens: &'a TokenVector,
        vocabulary: &'a [String],
    },
}

pub fn explain_instance<M: BlackBox + ?Sized>(
    model: &M,
    file_id: &str,
    instance: Instance<'_>,
    config: &ExplainerConfig,
) -> Result<Explanation, ExplainError> {
    config.validate()?;
    let (z, targets, labels) = match instance {
        Instance::Tabular { values, scheme } => {
            let samples = perturb_tabular(values, scheme, config.n_samples, config.seed)?;
            let targets = score_all(model, &samples, |s| s.x.clone());
            let own_bins: Vec<usize> = (0..values.len())
                .map(|j| scheme.bin_of(j, values[j]))
                .collect();
            let labels: Vec<String> = own_bins
                .iter()
                .enumerate()
                .map(|(j, &b)| scheme.bin_condition(j, b).to_string())
                .collect();
            (
                samples.into_iter().map(|s| s.z).collect::<Vec<_>>(),
                targets,
                labels,
            )
        }
        Instance::Tokens { tokens, vocabulary } => {
            let masks = perturb_tokens(tokens, config.n_samples, config.seed)?;
            let base = tokens.to_features(vocabulary);
            // vocabulary slot of each of the file's distinct tokens, if any
            let slots: Vec<Option<usize>> = tokens
                .tokens()
                .map(|t| vocabulary.binary_search_by(|v| v.as_str().cmp(t)).ok())
                .collect();
            let targets = score_all(model, &masks, |mask| {
                let mut x = base.clone();
                for (keep, slot) in mask.iter().zip(&slots) {
                    if let (0, Some(s)) = (keep, slot) {
                        x[*s] = 0.0;
                    }
                }
                x
            });
            let labels: Vec<String> = tokens.tokens().map(str::to_string).collect();
            (masks, targets, labels)
        }
    };
    let weights = z
        .iter()
        .map(|zi| kernel_weight(z_distance(zi), config.kernel_width))
        .collect::<Result<Vec<_>, _>>()?;
    let fit = fit_weighted_surrogate(&z, &targets, &weights, config.top_k, config.ridge_lambda)?;
    Ok(Explanation::new(file_id, targets[0], &fit, &labels, config))
}

/// Scores samples in parallel; results come back in sample order.
fn score_all<M, S, F>(model: &M, samples: &[S], to_raw: F) -> Vec<f64>
where
    M: BlackBox + ?Sized,
    S: Sync,
    F: Fn(&S) -> Vec<f64> + Sync,
{
    samples
        .par_iter()
        .map(|s| model.score(&to_raw(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MetricRecord, TabularDataset};

    fn scheme() -> DiscretizationScheme {
        let records = (0..100)
            .map(|i| MetricRecord {
                file_id: i.to_string(),
                features: vec![(i % 10) as f64, (i / 10) as f64, ((i * 7) % 13) as f64],
                label: (i % 2) as u8,
            })
            .collect();
        let ds = TabularDataset::new(vec!["a".into(), "b".into(), "c".into()], records).unwrap();
        discretize_features(&ds).unwrap()
    }

    #[test]
    fn constant_black_box_has_no_contributions() {
        let sch = scheme();
        let model = |_: &[f64]| 0.42;
        let cfg = ExplainerConfig {
            n_samples: 200,
            ..ExplainerConfig::tabular(3)
        };
        let e = explain_instance(
            &model,
            "f",
            Instance::Tabular {
                values: &[1.0, 2.0, 3.0],
                scheme: &sch,
            },
            &cfg,
        )
        .unwrap();
        assert!(e.contributions.is_empty());
        assert_eq!(e.fidelity_r2, 0.0);
        assert_eq!(e.risk_score, 0.42);
    }

    #[test]
    fn contributions_are_sorted_by_magnitude_then_name() {
        let mut c = vec![
            FeatureContribution {
                feature: "b".into(),
                weight: 0.2,
                direction: Direction::SupportsDefective,
            },
            FeatureContribution {
                feature: "a".into(),
                weight: -0.2,
                direction: Direction::SupportsClean,
            },
            FeatureContribution {
                feature: "c".into(),
                weight: 0.5,
                direction: Direction::SupportsDefective,
            },
        ];
        sort_contributions(&mut c);
        let names: Vec<&str> = c.iter().map(|c| c.feature.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
    }

    #[test]
    fn tabular_explanation_is_deterministic_and_labelled_by_bin() {
        let sch = scheme();
        let model = |x: &[f64]| if x[0] > 5.0 { 0.9 } else { 0.1 };
        let cfg = ExplainerConfig {
            n_samples: 500,
            ..ExplainerConfig::tabular(11)
        };
        let inst = Instance::Tabular {
            values: &[8.0, 2.0, 3.0],
            scheme: &sch,
        };
        let a = explain_instance(&model, "f", inst, &cfg).unwrap();
        let b = explain_instance(&model, "f", inst, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let top = &a.contributions[0];
        assert_eq!(top.feature, "a > 7");
        assert_eq!(top.direction, Direction::SupportsDefective);
    }

    #[test]
    fn token_mode_zeroes_dropped_tokens() {
        let vocab: Vec<String> = ["bug", "ok", "zz"].iter().map(|s| s.to_string()).collect();
        let mut tv = TokenVector::default();
        tv.counts.insert("bug".into(), 2);
        tv.counts.insert("ok".into(), 5);
        tv.counts.insert("local".into(), 1);
        let model = |x: &[f64]| if x[0] > 0.0 { 0.8 } else { 0.2 };
        let cfg = ExplainerConfig {
            n_samples: 400,
            ..ExplainerConfig::tokens(5)
        };
        let e = explain_instance(
            &model,
            "f",
            Instance::Tokens {
                tokens: &tv,
                vocabulary: &vocab,
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(e.risk_score, 0.8);
        assert_eq!(e.contributions[0].feature, "bug");
        assert!((e.contributions[0].weight - 0.6).abs() < 0.05);
        assert!(e.fidelity_r2 > 0.99);
    }

    #[test]
    fn direction_serializes_kebab_case() {
        let json = serde_json::to_string(&Direction::SupportsDefective).unwrap();
        assert_eq!(json, "\"supports-defective\"");
    }
}
